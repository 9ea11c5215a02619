//! Max-margin feasibility LP used by the mixed-cell enumerator.
//!
//! Given rows `g_l · z ≥ h_l` over free `z ∈ R^f`, computes
//!
//! ```text
//! τ* = max { τ ≤ 1 : ∃ z, g_l · z − τ ≥ h_l for all l }
//! ```
//!
//! by running a dense primal simplex on its dual
//! `min −hᵀy + μ  s.t.  Gᵀy = 0, 1ᵀy + μ = 1, y, μ ≥ 0`, which has only
//! `f + 1` rows. `τ* > 0` means the rows are strictly feasible.

/// Scratch buffers reused across calls.
#[derive(Default, Clone, Debug)]
pub struct LpWorkspace {
    tab: Vec<f64>,
    basis: Vec<usize>,
    cost: Vec<f64>,
}

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-12;

/// `g` is row-major `rows × f`.
pub fn max_margin(f: usize, g: &[f64], h: &[f64], ws: &mut LpWorkspace) -> f64 {
    let rows = h.len();
    debug_assert_eq!(g.len(), rows * f);
    if rows == 0 {
        return 1.0;
    }
    if f == 0 {
        // z is fixed; the margin is the smallest slack, capped at 1.
        return h.iter().fold(1.0f64, |acc, &hl| acc.min(-hl));
    }
    // Columns: y_0..y_{rows-1}, mu, rhs.
    let ncols = rows + 1;
    let width = ncols + 1;
    let trows = f + 1;
    ws.tab.clear();
    ws.tab.resize(trows * width, 0.0);
    let tab = &mut ws.tab;
    for r in 0..f {
        for l in 0..rows {
            tab[r * width + l] = g[l * f + r];
        }
    }
    for l in 0..rows {
        tab[f * width + l] = 1.0;
    }
    tab[f * width + rows] = 1.0;
    tab[f * width + ncols] = 1.0;

    ws.cost.clear();
    ws.cost.extend(h.iter().map(|&hl| -hl));
    ws.cost.push(1.0);

    // basis[r] = column basic in row r; usize::MAX marks an artificial.
    ws.basis.clear();
    ws.basis.resize(trows, usize::MAX);
    ws.basis[f] = rows;

    // Drive the zero-level artificials out with degenerate pivots.
    let mut active = vec![true; trows];
    for r in 0..f {
        let mut best = None;
        let mut best_abs = PIVOT_EPS;
        for c in 0..rows {
            let a = tab[r * width + c].abs();
            if a > best_abs {
                best_abs = a;
                best = Some(c);
            }
        }
        match best {
            Some(c) => {
                pivot(tab, trows, width, r, c);
                ws.basis[r] = c;
            }
            None => active[r] = false, // redundant row
        }
    }

    // Reduced costs: c_j - c_B^T B^-1 A_j, computed from the current tableau.
    let mut reduced = vec![0.0; ncols];
    let mut iterations = 0usize;
    loop {
        for (j, red) in reduced.iter_mut().enumerate() {
            let mut v = ws.cost[j];
            for r in 0..trows {
                if active[r] {
                    let b = ws.basis[r];
                    v -= ws.cost[b] * tab[r * width + j];
                }
            }
            *red = v;
        }
        // Bland's rule: lowest index with negative reduced cost.
        let entering = (0..ncols).find(|&j| reduced[j] < -COST_EPS && !is_basic(&ws.basis, &active, j));
        let Some(e) = entering else { break };
        let mut leave = None;
        let mut best_ratio = f64::INFINITY;
        for r in 0..trows {
            if !active[r] {
                continue;
            }
            let a = tab[r * width + e];
            if a > PIVOT_EPS {
                let ratio = tab[r * width + ncols] / a;
                let better = ratio < best_ratio - 1e-15
                    || (ratio <= best_ratio + 1e-15
                        && leave.is_some_and(|lr: usize| ws.basis[r] < ws.basis[lr]));
                if better || leave.is_none() {
                    best_ratio = ratio;
                    leave = Some(r);
                }
            }
        }
        let Some(lr) = leave else {
            // Unbounded dual cannot happen (the feasible set is compact);
            // treat as infeasible primal to be safe.
            return f64::NEG_INFINITY;
        };
        pivot(tab, trows, width, lr, e);
        ws.basis[lr] = e;
        iterations += 1;
        if iterations > 50 * (rows + trows) {
            break;
        }
    }
    let mut obj = 0.0;
    for r in 0..trows {
        if active[r] {
            obj += ws.cost[ws.basis[r]] * tab[r * width + ncols];
        }
    }
    obj
}

fn is_basic(basis: &[usize], active: &[bool], j: usize) -> bool {
    basis.iter().zip(active).any(|(&b, &a)| a && b == j)
}

fn pivot(tab: &mut [f64], trows: usize, width: usize, pr: usize, pc: usize) {
    let pv = tab[pr * width + pc];
    for c in 0..width {
        tab[pr * width + c] /= pv;
    }
    for r in 0..trows {
        if r == pr {
            continue;
        }
        let factor = tab[r * width + pc];
        if factor != 0.0 {
            for c in 0..width {
                let v = tab[pr * width + c];
                tab[r * width + c] -= factor * v;
            }
        }
    }
}
