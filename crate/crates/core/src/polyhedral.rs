//! Polyhedral start systems and the two-stage polyhedral path.
//!
//! Stage one deforms a random-coefficient system `Q` on the (origin-shifted)
//! supports of the target: for each fine mixed cell with inner normal `α`,
//! the substitution `x = y t^α` turns `Q` into `Σ c_a y^a t^{e_a}` with
//! `e_a ≥ 0` and `e_a = 0` exactly on the cell's edges, so at `t = 0` only a
//! binomial system survives. Its roots are written down in closed form and
//! tracked to `t = 1`, in the logarithmic time `σ = ln t` scaled so the
//! smallest positive exponent is 1. Stage two is the linear homotopy from
//! `γ Q` to the target.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::ops::Range;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Lu;
use crate::mixedcells::{mixed_volume, LiftedSupport, MixedCell};
use crate::orchestrate::PathSource;
use crate::poly::{Monomial, PolySystem, Polynomial};
use crate::tracker::{
    random_unit, track_path, Homotopy, HomotopyWorkspace, LinearHomotopy, PathResult, PathStatus,
    TrackerError, TrackerOptions,
};

/// Starting log-time; `e^{-36}` is below double-precision resolution.
const SIGMA0: f64 = -36.0;

/// Roots of the binomial system `y^{v_i} = b_i` (rows `v_i` of `v`).
///
/// The exponent matrix is brought to upper triangular form by unimodular
/// integer row operations, applied to the right-hand sides multiplicatively,
/// and the triangular system is solved by back substitution on arguments.
/// Moduli come from the real linear system `v · ln|y| = ln|b|`.
pub fn solve_binomial(v: &[Vec<i64>], b: &[Complex64]) -> Result<Vec<Vec<Complex64>>, TrackerError> {
    let tri = Triangular::new(v, b)?;
    Ok((0..tri.count()).map(|k| tri.root(k)).collect())
}

/// Triangularised binomial system.
#[derive(Clone, Debug)]
struct Triangular {
    t: Vec<Vec<i128>>,
    /// Arguments of the transformed right-hand sides, in `[0, 2π)`.
    theta: Vec<f64>,
    log_mod: Vec<f64>,
}

impl Triangular {
    fn new(v: &[Vec<i64>], b: &[Complex64]) -> Result<Self, TrackerError> {
        let n = v.len();
        let vf: Vec<f64> = v.iter().flatten().map(|&e| e as f64).collect();
        let lu = Lu::factor(&vf, n).ok_or(TrackerError::SingularCell)?;
        let mut log_mod: Vec<f64> = b.iter().map(|z| z.norm().ln()).collect();
        lu.solve(&mut log_mod);

        let mut t: Vec<Vec<i128>> = v
            .iter()
            .map(|r| r.iter().map(|&e| e as i128).collect())
            .collect();
        let mut theta: Vec<f64> = b.iter().map(|z| z.arg().rem_euclid(TAU)).collect();
        for k in 0..n {
            loop {
                let p = (k..n)
                    .filter(|&r| t[r][k] != 0)
                    .min_by_key(|&r| t[r][k].abs())
                    .ok_or(TrackerError::SingularCell)?;
                t.swap(k, p);
                theta.swap(k, p);
                let mut clean = true;
                for r in k + 1..n {
                    if t[r][k] == 0 {
                        continue;
                    }
                    let q = t[r][k] / t[k][k];
                    for c in k..n {
                        let v = q.checked_mul(t[k][c]).ok_or(TrackerError::Overflow)?;
                        t[r][c] = t[r][c].checked_sub(v).ok_or(TrackerError::Overflow)?;
                    }
                    theta[r] = (theta[r] - q as f64 * theta[k]).rem_euclid(TAU);
                    clean &= t[r][k] == 0;
                }
                if clean {
                    break;
                }
            }
        }
        Ok(Triangular { t, theta, log_mod })
    }

    fn count(&self) -> u64 {
        self.t
            .iter()
            .enumerate()
            .map(|(i, r)| r[i].unsigned_abs() as u64)
            .product()
    }

    /// Root number `k`, digits in mixed radix `|t_ii|` (last variable fastest).
    fn root(&self, mut k: u64) -> Vec<Complex64> {
        let n = self.t.len();
        let mut phi = vec![0.0; n];
        for i in (0..n).rev() {
            let d = self.t[i][i];
            let m = d.unsigned_abs() as u64;
            let digit = k % m;
            k /= m;
            let mut rhs = self.theta[i] + TAU * digit as f64;
            for j in i + 1..n {
                rhs -= self.t[i][j] as f64 * phi[j];
            }
            phi[i] = (rhs / d as f64).rem_euclid(TAU);
        }
        phi.iter()
            .zip(&self.log_mod)
            .map(|(&p, &l)| Complex64::from_polar(l.exp(), p))
            .collect()
    }
}

/// Everything needed to start the paths of one cell.
#[derive(Clone, Debug)]
pub struct CellStart {
    /// Scaled exponent `e_a / e_min` for every term of the start system.
    exponents: Vec<f64>,
    tri: Triangular,
    /// Binomial system `c_a y^a + c_b y^b` of the cell.
    binomial: PolySystem,
}

impl CellStart {
    pub fn binomial(&self) -> &PolySystem {
        &self.binomial
    }

    pub fn start_points(&self) -> Vec<Vec<Complex64>> {
        (0..self.tri.count()).map(|k| self.tri.root(k)).collect()
    }
}

/// Stage one homotopy of one cell.
struct CellHomotopy<'a> {
    start: &'a PolySystem,
    exponents: &'a [f64],
}

impl Homotopy for CellHomotopy<'_> {
    fn nvars(&self) -> usize {
        self.start.nvars()
    }

    fn eval(
        &self,
        x: &[Complex64],
        u: f64,
        h: &mut [Complex64],
        hx: &mut [Complex64],
        hu: Option<&mut [Complex64]>,
        ws: &mut HomotopyWorkspace,
    ) {
        let sigma = SIGMA0 * (1.0 - u);
        ws.coeffs.clear();
        ws.coeffs.extend(
            self.start
                .coefficients()
                .iter()
                .zip(self.exponents)
                .map(|(c, &e)| if e == 0.0 { *c } else { c * (e * sigma).exp() }),
        );
        self.start
            .eval_into(x, Some(&ws.coeffs), h, Some(hx), &mut ws.eval);
        if let Some(hu) = hu {
            // d/du = dσ/du · d/dσ with dσ/du = −σ0
            for (c, &e) in ws.coeffs.iter_mut().zip(self.exponents) {
                *c *= e * -SIGMA0;
            }
            let coeffs = std::mem::take(&mut ws.coeffs);
            self.start.eval_into(x, Some(&coeffs), hu, None, &mut ws.eval);
            ws.coeffs = coeffs;
        }
    }

    fn end_system(&self) -> &PolySystem {
        self.start
    }
}

/// Polyhedral homotopy data for one target system; a [`PathSource`] whose
/// path count is the (origin-shifted) mixed volume.
pub struct PolyhedralPlan {
    target: PolySystem,
    start: PolySystem,
    gamma: Complex64,
    lifted: Vec<LiftedSupport>,
    cells: Vec<MixedCell>,
    offsets: Vec<u64>,
    /// Flat start-system term index of every support point.
    term_of_point: Vec<Vec<usize>>,
    lifting_seed: u64,
    coefficient_seed: u64,
    opts: TrackerOptions,
}

impl PolyhedralPlan {
    pub fn new(
        target: &PolySystem,
        lifting_seed: u64,
        coefficient_seed: u64,
        opts: TrackerOptions,
    ) -> Result<Self, TrackerError> {
        let mv = mixed_volume(target, lifting_seed)?;
        let n = target.nvars();
        let mut rng = ChaCha8Rng::seed_from_u64(coefficient_seed ^ 0x9e37_79b9_7f4a_7c15);
        let gamma = random_unit(&mut rng);
        let mut polys = Vec::with_capacity(n);
        for s in &mv.lifted {
            let mut p = Polynomial::zero(n);
            for pt in &s.points {
                let m = Monomial::new(pt.iter().map(|&e| e as u32).collect());
                p.add_term(random_unit(&mut rng), m);
            }
            polys.push(p);
        }
        let start = PolySystem::new(n, polys).expect("square by construction");
        let term_of_point = mv
            .lifted
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let base = start.term_range(i).start;
                let index: HashMap<Vec<u32>, usize> = start.polys()[i]
                    .terms()
                    .enumerate()
                    .map(|(k, (m, _))| (m.exponents().to_vec(), base + k))
                    .collect();
                s.points
                    .iter()
                    .map(|pt| index[&pt.iter().map(|&e| e as u32).collect::<Vec<_>>()])
                    .collect()
            })
            .collect();
        let mut offsets = vec![0u64];
        for c in &mv.cells {
            offsets.push(offsets.last().unwrap() + c.volume);
        }
        Ok(PolyhedralPlan {
            target: target.clone(),
            start,
            gamma,
            lifted: mv.lifted,
            cells: mv.cells,
            offsets,
            term_of_point,
            lifting_seed: mv.lifting_seed,
            coefficient_seed,
            opts,
        })
    }

    pub fn cells(&self) -> &[MixedCell] {
        &self.cells
    }

    pub fn start_system(&self) -> &PolySystem {
        &self.start
    }

    pub fn lifting_seed(&self) -> u64 {
        self.lifting_seed
    }

    pub fn cell_start(&self, ci: usize) -> Result<CellStart, TrackerError> {
        let cell = &self.cells[ci];
        let alpha = cell.normal(&self.lifted);
        let n = self.target.nvars();
        let coeffs = self.start.coefficients();
        let mut raw = vec![0.0; coeffs.len()];
        let mut rows = Vec::with_capacity(n);
        let mut rhs = Vec::with_capacity(n);
        let mut binomials = Vec::with_capacity(n);
        for (i, s) in self.lifted.iter().enumerate() {
            let (a, b) = cell.edges[i];
            let val = |k: usize| -> f64 {
                s.points[k]
                    .iter()
                    .zip(&alpha)
                    .map(|(&e, x)| e as f64 * x)
                    .sum::<f64>()
                    + s.lifts[k]
            };
            let beta = val(a);
            for k in 0..s.points.len() {
                let e = if k == a || k == b { 0.0 } else { (val(k) - beta).max(0.0) };
                raw[self.term_of_point[i][k]] = e;
            }
            let ca = coeffs[self.term_of_point[i][a]];
            let cb = coeffs[self.term_of_point[i][b]];
            rows.push(
                s.points[a]
                    .iter()
                    .zip(&s.points[b])
                    .map(|(x, y)| x - y)
                    .collect::<Vec<i64>>(),
            );
            rhs.push(-cb / ca);
            let mono = |k: usize| Monomial::new(s.points[k].iter().map(|&e| e as u32).collect());
            let mut p = Polynomial::zero(n);
            p.add_term(ca, mono(a));
            p.add_term(cb, mono(b));
            binomials.push(p);
        }
        let emin = raw
            .iter()
            .copied()
            .filter(|&e| e > 0.0)
            .fold(f64::INFINITY, f64::min);
        let exponents = if emin.is_finite() {
            raw.iter().map(|e| e / emin).collect()
        } else {
            raw
        };
        Ok(CellStart {
            exponents,
            tri: Triangular::new(&rows, &rhs)?,
            binomial: PolySystem::new(n, binomials).expect("square by construction"),
        })
    }

    fn locate(&self, index: u64) -> (usize, u64) {
        let ci = self.offsets.partition_point(|&o| o <= index) - 1;
        (ci, index - self.offsets[ci])
    }

    fn track_with(&self, cs: &CellStart, local: u64) -> PathResult {
        let y0 = cs.tri.root(local);
        let h1 = CellHomotopy {
            start: &self.start,
            exponents: &cs.exponents,
        };
        let first = track_path(&h1, &y0, &self.opts);
        if first.status != PathStatus::Converged {
            return PathResult {
                status: PathStatus::Failed,
                ..first
            };
        }
        let h2 = LinearHomotopy {
            start: &self.start,
            target: &self.target,
            gamma: self.gamma,
        };
        let mut second = track_path(&h2, &first.endpoint, &self.opts);
        second.steps_taken += first.steps_taken;
        second
    }
}

impl PathSource for PolyhedralPlan {
    fn total_paths(&self) -> u64 {
        *self.offsets.last().unwrap()
    }

    fn track(&self, index: u64) -> PathResult {
        self.track_range(index..index + 1).pop().unwrap()
    }

    fn track_range(&self, range: Range<u64>) -> Vec<PathResult> {
        let mut out = Vec::with_capacity((range.end - range.start) as usize);
        let mut cached: Option<(usize, CellStart)> = None;
        for index in range {
            let (ci, local) = self.locate(index);
            if cached.as_ref().map(|c| c.0) != Some(ci) {
                match self.cell_start(ci) {
                    Ok(cs) => cached = Some((ci, cs)),
                    Err(_) => {
                        cached = None;
                        out.push(PathResult {
                            status: PathStatus::Failed,
                            endpoint: vec![Complex64::default(); self.target.nvars()],
                            residual: f64::INFINITY,
                            condition_estimate: f64::INFINITY,
                            steps_taken: 0,
                        });
                        continue;
                    }
                }
            }
            out.push(self.track_with(&cached.as_ref().unwrap().1, local));
        }
        out
    }

    fn fingerprint(&self) -> String {
        format!(
            "polyhedral lifting={} coefficients={}\n{}",
            self.lifting_seed,
            self.coefficient_seed,
            self.target.to_text()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_inf;

    #[test]
    fn binomial_roots_by_triangular_solve() {
        let b = [Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5)];
        let roots = solve_binomial(&[vec![3, 1], vec![1, 2]], &b).unwrap();
        assert_eq!(roots.len(), 5);
        for y in &roots {
            assert!((y[0].powi(3) * y[1] - b[0]).norm() < 1e-12);
            assert!((y[0] * y[1].powi(2) - b[1]).norm() < 1e-12);
        }
        for i in 0..5 {
            for j in 0..i {
                assert!(norm_inf(&[roots[i][0] - roots[j][0], roots[i][1] - roots[j][1]]) > 1e-3);
            }
        }
    }

    #[test]
    fn identity_cell_has_one_root() {
        let b = [Complex64::new(2.0, 0.0), Complex64::new(0.0, -1.0)];
        let roots = solve_binomial(&[vec![1, 0], vec![0, 1]], &b).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0][0] - b[0]).norm() < 1e-15 && (roots[0][1] - b[1]).norm() < 1e-15);
    }

    #[test]
    fn singular_exponents_rejected() {
        let b = [Complex64::new(1.0, 0.0); 2];
        assert!(matches!(
            solve_binomial(&[vec![1, 2], vec![2, 4]], &b),
            Err(TrackerError::SingularCell)
        ));
    }
}
