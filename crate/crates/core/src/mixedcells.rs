//! Random lifting, fine mixed-cell enumeration and mixed volume.
//!
//! Cells are found by depth-first extension of partial edge selections. At
//! every node the equation with the fewest surviving candidate edges is
//! extended next; candidates are first screened with a pairwise relation
//! table and then confirmed by a max-margin LP (see [`crate::lp`]).
//!
//! [`mixed_volume`] works with the supports of a system after adding the
//! origin to every support that lacks it, which turns the torus root count
//! into a bound on isolated roots in all of `Cⁿ` (roots with zero
//! coordinates included).
//!
//! Two-point supports whose difference vector has a unit entry are
//! eliminated up front: their only edge is forced, the corresponding normal
//! coordinate is solved for, and the remaining supports are projected along
//! it. The projection is unimodular, so cell volumes are unchanged.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Lu;
use crate::lp::{max_margin, LpWorkspace};
use crate::poly::PolySystem;

/// Relative tolerance on LP margins and tie tests.
pub const TIE_TOL: f64 = 1e-9;

/// Open search nodes created before the parallel depth-first phase.
const FRONTIER_TARGET: usize = 2048;

/// Maximum number of re-lifts attempted by [`mixed_volume`].
pub const MAX_RELIFTS: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixedVolumeError {
    #[error("system is not square: {eqs} supports in {vars} variables")]
    NotSquare { eqs: usize, vars: usize },
    #[error("support {0} is empty")]
    EmptySupport(usize),
    #[error("degenerate lifting: an LP tie fell inside the tolerance; re-lift with a new seed")]
    DegenerateLifting,
    #[error("integer overflow while computing a cell volume")]
    Overflow,
    #[error("no generic lifting found in {0} attempts")]
    RetriesExhausted(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedSupport {
    pub points: Vec<Vec<i64>>,
    pub lifts: Vec<f64>,
}

/// A fine mixed cell: one edge (pair of point indices) per support.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MixedCell {
    pub edges: Vec<(usize, usize)>,
    pub volume: u64,
}

impl MixedCell {
    /// The inner normal `α` shared by the cell's edges: for support `i` with
    /// edge `(a, b)`, `⟨a, α⟩ + ω(a) = ⟨b, α⟩ + ω(b)`.
    pub fn normal(&self, lifted: &[LiftedSupport]) -> Vec<f64> {
        let n = lifted.len();
        let mut m = vec![0.0; n * n];
        let mut rhs = vec![0.0; n];
        for (i, &(a, b)) in self.edges.iter().enumerate() {
            let s = &lifted[i];
            for k in 0..n {
                m[i * n + k] = (s.points[a][k] - s.points[b][k]) as f64;
            }
            rhs[i] = s.lifts[b] - s.lifts[a];
        }
        let lu = Lu::factor(&m, n).expect("fine mixed cell has a nonsingular edge matrix");
        lu.solve(&mut rhs);
        rhs
    }

    /// Edge difference vectors `a − b`, one row per support.
    pub fn edge_matrix(&self, lifted: &[LiftedSupport]) -> Vec<Vec<i64>> {
        self.edges
            .iter()
            .zip(lifted)
            .map(|(&(a, b), s)| s.points[a].iter().zip(&s.points[b]).map(|(x, y)| x - y).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedVolumeResult {
    pub mixed_volume: BigUint,
    pub cells: Vec<MixedCell>,
    pub lifting_seed: u64,
    pub lifted: Vec<LiftedSupport>,
}

/// Volume-only result for systems whose cell list is too large to keep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedVolumeCount {
    pub mixed_volume: BigUint,
    pub cell_count: u64,
    pub lifting_seed: u64,
}

/// Progress of a long enumeration: search branches finished so far.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Progress {
    pub branches_done: u64,
    pub branches_total: u64,
    pub cells: u64,
    pub volume: u64,
}

/// Lifting values i.i.d. uniform in (0, 1), deterministic in `seed`.
pub fn lift_supports(supports: &[Vec<Vec<i64>>], seed: u64) -> Vec<LiftedSupport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    supports
        .iter()
        .map(|pts| LiftedSupport {
            points: pts.clone(),
            lifts: pts
                .iter()
                .map(|_| loop {
                    let v: f64 = rng.gen();
                    if v > 0.0 {
                        break v;
                    }
                })
                .collect(),
        })
        .collect()
}

pub fn system_supports(system: &PolySystem) -> Vec<Vec<Vec<i64>>> {
    system
        .supports()
        .into_iter()
        .map(|s| s.into_iter().map(|e| e.into_iter().map(i64::from).collect()).collect())
        .collect()
}

/// [`system_supports`] with the origin added wherever it is missing.
pub fn shifted_supports(system: &PolySystem) -> Vec<Vec<Vec<i64>>> {
    let mut sup = system_supports(system);
    for s in sup.iter_mut() {
        if !s.iter().any(|p| p.iter().all(|&v| v == 0)) {
            s.push(vec![0; system.nvars()]);
        }
    }
    sup
}

/// All fine mixed cells, sorted canonically.
pub fn enumerate_cells(lifted: &[LiftedSupport]) -> Result<Vec<MixedCell>, MixedVolumeError> {
    let enumerator = CellEnumerator::new(lifted)?;
    let mut cells = enumerator.collect()?;
    cells.sort();
    Ok(cells)
}

/// Mixed volume with the cell list. Re-lifts with `seed + 1, seed + 2, …`
/// when the lifting turns out degenerate.
pub fn mixed_volume(system: &PolySystem, seed: u64) -> Result<MixedVolumeResult, MixedVolumeError> {
    check_square(system)?;
    let supports = shifted_supports(system);
    for attempt in 0..MAX_RELIFTS {
        let s = seed.wrapping_add(attempt);
        let lifted = lift_supports(&supports, s);
        match enumerate_cells(&lifted) {
            Ok(cells) => {
                let total: BigUint = cells.iter().map(|c| BigUint::from(c.volume)).sum();
                return Ok(MixedVolumeResult {
                    mixed_volume: total,
                    cells,
                    lifting_seed: s,
                    lifted,
                });
            }
            Err(MixedVolumeError::DegenerateLifting) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(MixedVolumeError::RetriesExhausted(MAX_RELIFTS))
}

/// Cells found by a search that may have stopped early.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialCount {
    pub branches_done: u64,
    pub branches_total: u64,
    pub cells: u64,
    pub volume: BigUint,
}

impl PartialCount {
    pub fn complete(&self) -> bool {
        self.branches_done == self.branches_total
    }
}

/// Time-boxed enumeration: whatever part of the search fits in `budget`.
/// When complete, `volume` is the mixed volume.
pub fn mixed_volume_partial(
    system: &PolySystem,
    seed: u64,
    budget: Duration,
    progress: Option<&(dyn Fn(Progress) + Sync)>,
) -> Result<PartialCount, MixedVolumeError> {
    check_square(system)?;
    let deadline = Instant::now() + budget;
    let supports = shifted_supports(system);
    for attempt in 0..MAX_RELIFTS {
        let lifted = lift_supports(&supports, seed.wrapping_add(attempt));
        let enumerator = CellEnumerator::new(&lifted)?;
        match enumerator.count_until(Some(deadline), progress) {
            Err(MixedVolumeError::DegenerateLifting) => continue,
            r => return r,
        }
    }
    Err(MixedVolumeError::RetriesExhausted(MAX_RELIFTS))
}

/// Mixed volume without materialising the cells.
pub fn mixed_volume_count(
    system: &PolySystem,
    seed: u64,
    progress: Option<&(dyn Fn(Progress) + Sync)>,
) -> Result<MixedVolumeCount, MixedVolumeError> {
    check_square(system)?;
    let supports = shifted_supports(system);
    for attempt in 0..MAX_RELIFTS {
        let s = seed.wrapping_add(attempt);
        let lifted = lift_supports(&supports, s);
        let enumerator = CellEnumerator::new(&lifted)?;
        match enumerator.count(progress) {
            Ok((cells, volume)) => {
                return Ok(MixedVolumeCount {
                    mixed_volume: volume,
                    cell_count: cells,
                    lifting_seed: s,
                })
            }
            Err(MixedVolumeError::DegenerateLifting) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(MixedVolumeError::RetriesExhausted(MAX_RELIFTS))
}

fn check_square(system: &PolySystem) -> Result<(), MixedVolumeError> {
    if !system.is_square() {
        return Err(MixedVolumeError::NotSquare {
            eqs: system.len(),
            vars: system.nvars(),
        });
    }
    Ok(())
}

/// Exact determinant by fraction-free elimination.
pub fn integer_determinant(rows: &[Vec<i64>]) -> Result<i128, MixedVolumeError> {
    let n = rows.len();
    let mut a: Vec<Vec<i128>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| v as i128).collect())
        .collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n {
        if a[k][k] == 0 {
            match (k + 1..n).find(|&i| a[i][k] != 0) {
                Some(i) => {
                    a.swap(k, i);
                    sign = -sign;
                }
                None => return Ok(0),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = a[i][j]
                    .checked_mul(a[k][k])
                    .and_then(|x| a[i][k].checked_mul(a[k][j]).and_then(|y| x.checked_sub(y)))
                    .ok_or(MixedVolumeError::Overflow)?;
                a[i][j] = v / prev;
            }
            a[i][k] = 0;
        }
        prev = a[k][k];
    }
    Ok(sign * a[n - 1][n - 1])
}

/// A support after binomial elimination.
#[derive(Debug)]
struct RedSupport {
    orig: usize,
    pts: Vec<Vec<f64>>,
    ipts: Vec<Vec<i64>>,
    lifts: Vec<f64>,
    /// Lower edges (point index pairs).
    edges: Vec<(usize, usize)>,
    /// Global id of this support's first edge.
    edge_base: usize,
}

/// Fixed-size bitset over global edge ids.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(len: usize) -> Self {
        Bits(vec![0; len.div_ceil(64)])
    }
    fn full(len: usize) -> Self {
        let mut b = Self::new(len);
        for i in 0..len {
            b.set(i);
        }
        b
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }
    fn count_range(&self, lo: usize, hi: usize) -> usize {
        (lo..hi).filter(|&i| self.get(i)).count()
    }
}

/// Affine parametrisation `α = p + M z` of the normals satisfying the
/// equalities chosen so far.
#[derive(Clone, Debug)]
struct Param {
    dim: usize,
    free: usize,
    p: Vec<f64>,
    /// `dim × free`, row-major.
    m: Vec<f64>,
}

impl Param {
    fn root(dim: usize) -> Self {
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = 1.0;
        }
        Param {
            dim,
            free: dim,
            p: vec![0.0; dim],
            m,
        }
    }

    /// Adds `⟨d, α⟩ = c`. Returns `None` if `d` is dependent on earlier rows.
    fn constrain(&self, d: &[f64], c: f64) -> Option<Param> {
        let (dim, f) = (self.dim, self.free);
        let mut u = vec![0.0; f];
        for (i, &di) in d.iter().enumerate() {
            if di != 0.0 {
                for (r, ur) in u.iter_mut().enumerate() {
                    *ur += di * self.m[i * f + r];
                }
            }
        }
        let dnorm: f64 = d.iter().map(|x| x.abs()).sum();
        let (q, uq) = u
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, &v)| if v.abs() > acc.1.abs() { (i, v) } else { acc });
        if f == 0 || uq.abs() <= 1e-10 * dnorm.max(1.0) {
            return None;
        }
        let dp: f64 = d.iter().zip(&self.p).map(|(a, b)| a * b).sum();
        let shift = (c - dp) / uq;
        let mut p = self.p.clone();
        let mut m = Vec::with_capacity(dim * (f - 1));
        for i in 0..dim {
            let mq = self.m[i * f + q];
            p[i] += mq * shift;
            for r in 0..f {
                if r != q {
                    m.push(self.m[i * f + r] - mq * u[r] / uq);
                }
            }
        }
        Some(Param {
            dim,
            free: f - 1,
            p,
            m,
        })
    }
}

/// Enumerates fine mixed cells of one lifting.
pub struct CellEnumerator {
    n: usize,
    dim: usize,
    sups: Vec<RedSupport>,
    /// Eliminated binomials: (original support, forced edge).
    forced: Vec<(usize, (usize, usize))>,
    total_edges: usize,
    relation: Vec<Bits>,
    /// Diameter of the lifting values, used to scale tie tests.
    lift_scale: f64,
}

struct Search<'a> {
    en: &'a CellEnumerator,
    ws: LpWorkspace,
    g: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Clone)]
struct Node {
    param: Param,
    chosen: Vec<Option<usize>>,
    compat: Bits,
}

impl Node {
    fn is_complete(&self) -> bool {
        self.chosen.iter().all(Option::is_some)
    }
}

impl CellEnumerator {
    pub fn new(lifted: &[LiftedSupport]) -> Result<Self, MixedVolumeError> {
        let n = lifted.len();
        for (i, s) in lifted.iter().enumerate() {
            if s.points.is_empty() {
                return Err(MixedVolumeError::EmptySupport(i));
            }
            if s.points.iter().any(|p| p.len() != n) {
                return Err(MixedVolumeError::NotSquare {
                    eqs: n,
                    vars: s.points[0].len(),
                });
            }
        }

        // Binomial elimination on a working copy.
        let mut pts: Vec<Vec<Vec<i64>>> = lifted.iter().map(|s| s.points.clone()).collect();
        let mut lifts: Vec<Vec<f64>> = lifted.iter().map(|s| s.lifts.clone()).collect();
        let mut alive: Vec<bool> = vec![true; n];
        let mut coords: Vec<usize> = (0..n).collect();
        let mut forced = Vec::new();
        loop {
            let pick = (0..n).find_map(|i| {
                if !alive[i] || pts[i].len() != 2 {
                    return None;
                }
                let d: Vec<i64> = pts[i][1].iter().zip(&pts[i][0]).map(|(a, b)| a - b).collect();
                d.iter().position(|v| v.abs() == 1).map(|q| (i, d, q))
            });
            let Some((i, d, q)) = pick else { break };
            // <d, α> = w0 − w1 for the edge (0, 1)
            let cval = lifts[i][0] - lifts[i][1];
            let dq = d[q];
            for j in 0..n {
                if !alive[j] || j == i {
                    continue;
                }
                for (pt, w) in pts[j].iter_mut().zip(lifts[j].iter_mut()) {
                    let aq = pt[q];
                    if aq != 0 {
                        for (r, v) in pt.iter_mut().enumerate() {
                            if r != q {
                                *v -= aq * dq * d[r];
                            }
                        }
                        *w += (aq * dq) as f64 * cval;
                    }
                    pt.remove(q);
                }
            }
            alive[i] = false;
            coords.remove(q);
            forced.push((i, (0usize, 1usize)));
        }
        let dim = coords.len();
        let lift_scale = lifts
            .iter()
            .flatten()
            .fold(0.0f64, |a, &w| a.max(w.abs()))
            .max(1.0);

        let mut sups: Vec<RedSupport> = (0..n)
            .filter(|&i| alive[i])
            .map(|i| RedSupport {
                orig: i,
                pts: pts[i].iter().map(|p| p.iter().map(|&v| v as f64).collect()).collect(),
                ipts: pts[i].clone(),
                lifts: lifts[i].clone(),
                edges: Vec::new(),
                edge_base: 0,
            })
            .collect();
        debug_assert_eq!(sups.len(), dim);

        let mut en = CellEnumerator {
            n,
            dim,
            sups: Vec::new(),
            forced,
            total_edges: 0,
            relation: Vec::new(),
            lift_scale,
        };

        // Lower edges of each support on its own.
        let mut ws = LpWorkspace::default();
        let mut base = 0;
        for s in sups.iter_mut() {
            let mut edges = Vec::new();
            for a in 0..s.pts.len() {
                for b in a + 1..s.pts.len() {
                    if s.ipts[a] == s.ipts[b] {
                        continue;
                    }
                    let root = Param::root(dim);
                    let (d, c) = edge_equation(s, a, b);
                    let Some(param) = root.constrain(&d, c) else { continue };
                    let (g, h) = support_rows(s, (a, b), &param);
                    let margin = max_margin(param.free, &g, &h, &mut ws);
                    if en.classify(margin)? {
                        edges.push((a, b));
                    }
                }
            }
            s.edges = edges;
            s.edge_base = base;
            base += s.edges.len();
        }
        en.total_edges = base;
        en.sups = sups;
        en.build_relation_table()?;
        Ok(en)
    }

    fn classify(&self, margin: f64) -> Result<bool, MixedVolumeError> {
        let tol = TIE_TOL * self.lift_scale;
        if margin > tol {
            Ok(true)
        } else if margin < -tol {
            Ok(false)
        } else {
            Err(MixedVolumeError::DegenerateLifting)
        }
    }

    fn build_relation_table(&mut self) -> Result<(), MixedVolumeError> {
        let total = self.total_edges;
        let dim = self.dim;
        let mut ids = Vec::with_capacity(total);
        for (si, s) in self.sups.iter().enumerate() {
            for e in 0..s.edges.len() {
                ids.push((si, e));
            }
        }
        let this = &*self;
        let rows: Vec<Result<Bits, MixedVolumeError>> = ids
            .par_iter()
            .map_init(LpWorkspace::default, |ws, &(si, e)| {
                let mut bits = Bits::new(total);
                let s = &this.sups[si];
                let (a, b) = s.edges[e];
                let (d, c) = edge_equation(s, a, b);
                let p1 = Param::root(dim).constrain(&d, c).expect("edge is nonzero");
                for (sj, t) in this.sups.iter().enumerate() {
                    if sj == si {
                        continue;
                    }
                    for (f, &(a2, b2)) in t.edges.iter().enumerate() {
                        let (d2, c2) = edge_equation(t, a2, b2);
                        let Some(p2) = p1.constrain(&d2, c2) else { continue };
                        let (mut g, mut h) = support_rows(s, (a, b), &p2);
                        let (g2, h2) = support_rows(t, (a2, b2), &p2);
                        g.extend(g2);
                        h.extend(h2);
                        if this.classify(max_margin(p2.free, &g, &h, ws))? {
                            bits.set(t.edge_base + f);
                        }
                    }
                }
                // edges of the same support are mutually exclusive
                Ok(bits)
            })
            .collect();
        self.relation = rows.into_iter().collect::<Result<_, _>>()?;
        Ok(())
    }

    /// Number of supports left after binomial elimination.
    pub fn reduced_dim(&self) -> usize {
        self.dim
    }

    /// Lower edge counts per reduced support.
    pub fn edge_counts(&self) -> Vec<usize> {
        self.sups.iter().map(|s| s.edges.len()).collect()
    }

    fn root(&self) -> Node {
        Node {
            param: Param::root(self.dim),
            chosen: vec![None; self.dim],
            compat: Bits::full(self.total_edges),
        }
    }

    /// Expands the search tree breadth-first until at least `target` open
    /// nodes exist. The nodes, in a fixed order, are the units of parallel
    /// work; complete selections met on the way are returned as well.
    fn frontier(&self, target: usize) -> Result<Vec<Node>, MixedVolumeError> {
        let mut search = self.search();
        let mut level = vec![self.root()];
        for _ in 0..self.dim {
            if level.len() >= target || level.iter().all(|n| n.is_complete()) {
                break;
            }
            let mut next = Vec::new();
            for node in &level {
                let Some(j) = self.pick_support(node) else {
                    next.push(node.clone());
                    continue;
                };
                let s = &self.sups[j];
                for e in 0..s.edges.len() {
                    if node.compat.get(s.edge_base + e) {
                        if let Some(child) = search.extend(node, j, e)? {
                            next.push(child);
                        }
                    }
                }
            }
            level = next;
        }
        Ok(level)
    }

    fn search(&self) -> Search<'_> {
        Search {
            en: self,
            ws: LpWorkspace::default(),
            g: Vec::new(),
            h: Vec::new(),
        }
    }

    fn pick_support(&self, node: &Node) -> Option<usize> {
        (0..self.dim)
            .filter(|&j| node.chosen[j].is_none())
            .min_by_key(|&j| {
                let s = &self.sups[j];
                (node.compat.count_range(s.edge_base, s.edge_base + s.edges.len()), j)
            })
    }

    fn make_cell(&self, chosen: &[Option<usize>]) -> Result<MixedCell, MixedVolumeError> {
        let mut edges = vec![(0usize, 0usize); self.n];
        let mut rows = Vec::with_capacity(self.dim);
        for (s, e) in self.sups.iter().zip(chosen) {
            let (a, b) = s.edges[e.expect("complete selection")];
            edges[s.orig] = (a, b);
            rows.push(s.ipts[a].iter().zip(&s.ipts[b]).map(|(x, y)| x - y).collect::<Vec<_>>());
        }
        for &(i, e) in &self.forced {
            edges[i] = e;
        }
        let volume = if self.dim == 0 {
            1
        } else {
            integer_determinant(&rows)?.unsigned_abs()
        };
        let volume = u64::try_from(volume).map_err(|_| MixedVolumeError::Overflow)?;
        Ok(MixedCell { edges, volume })
    }

    fn run_node(&self, node: &Node, sink: &mut dyn FnMut(MixedCell)) -> Result<(), MixedVolumeError> {
        self.search().dfs(node.clone(), sink)
    }

    pub fn collect(&self) -> Result<Vec<MixedCell>, MixedVolumeError> {
        if self.dim == 0 {
            return Ok(vec![self.make_cell(&[])?]);
        }
        let nodes = self.frontier(FRONTIER_TARGET)?;
        let parts: Vec<Result<Vec<MixedCell>, MixedVolumeError>> = nodes
            .par_iter()
            .map(|node| {
                let mut out = Vec::new();
                self.run_node(node, &mut |c| out.push(c))?;
                Ok(out)
            })
            .collect();
        let mut cells = Vec::new();
        for p in parts {
            cells.extend(p?);
        }
        Ok(cells)
    }

    /// `(cell count, mixed volume)`.
    pub fn count(
        &self,
        progress: Option<&(dyn Fn(Progress) + Sync)>,
    ) -> Result<(u64, BigUint), MixedVolumeError> {
        let p = self.count_until(None, progress)?;
        Ok((p.cells, p.volume))
    }

    /// Like [`count`](Self::count), but search branches not started before
    /// `deadline` are skipped; the result then covers a subset of the cells.
    pub fn count_until(
        &self,
        deadline: Option<Instant>,
        progress: Option<&(dyn Fn(Progress) + Sync)>,
    ) -> Result<PartialCount, MixedVolumeError> {
        if self.dim == 0 {
            let c = self.make_cell(&[])?;
            return Ok(PartialCount {
                branches_done: 1,
                branches_total: 1,
                cells: 1,
                volume: BigUint::from(c.volume),
            });
        }
        let nodes = self.frontier(FRONTIER_TARGET)?;
        let done = AtomicU64::new(0);
        let cells_total = AtomicU64::new(0);
        let vol_total = AtomicU64::new(0);
        let total = nodes.len() as u64;
        let parts: Vec<Result<Option<(u64, u128)>, MixedVolumeError>> = nodes
            .par_iter()
            .map(|node| {
                if deadline.is_some_and(|d| Instant::now() >= d) {
                    return Ok(None);
                }
                let mut cells = 0u64;
                let mut vol = 0u128;
                self.run_node(node, &mut |c| {
                    cells += 1;
                    vol += c.volume as u128;
                })?;
                let d = done.fetch_add(1, Ordering::Relaxed) + 1;
                let ct = cells_total.fetch_add(cells, Ordering::Relaxed) + cells;
                let vt = vol_total.fetch_add(vol as u64, Ordering::Relaxed) + vol as u64;
                if let Some(cb) = progress {
                    cb(Progress {
                        branches_done: d,
                        branches_total: total,
                        cells: ct,
                        volume: vt,
                    });
                }
                Ok(Some((cells, vol)))
            })
            .collect();
        let mut out = PartialCount {
            branches_done: 0,
            branches_total: total,
            cells: 0,
            volume: BigUint::default(),
        };
        let mut vol = 0u128;
        for p in parts {
            if let Some((c, v)) = p? {
                out.branches_done += 1;
                out.cells += c;
                vol += v;
            }
        }
        out.volume = BigUint::from(vol);
        Ok(out)
    }
}

impl Search<'_> {
    /// Tries to add edge `e` of support `j` to `node`.
    fn extend(&mut self, node: &Node, j: usize, e: usize) -> Result<Option<Node>, MixedVolumeError> {
        let en = self.en;
        let s = &en.sups[j];
        let (a, b) = s.edges[e];
        let (d, c) = edge_equation(s, a, b);
        let Some(param) = node.param.constrain(&d, c) else {
            return Ok(None);
        };
        self.g.clear();
        self.h.clear();
        for (i, t) in en.sups.iter().enumerate() {
            let edge = if i == j {
                Some((a, b))
            } else {
                node.chosen[i].map(|k| t.edges[k])
            };
            if let Some(edge) = edge {
                append_rows(t, edge, &param, &mut self.g, &mut self.h);
            }
        }
        let margin = max_margin(param.free, &self.g, &self.h, &mut self.ws);
        if !en.classify(margin)? {
            return Ok(None);
        }
        let mut chosen = node.chosen.clone();
        chosen[j] = Some(e);
        Ok(Some(Node {
            param,
            chosen,
            compat: node.compat.and(&en.relation[s.edge_base + e]),
        }))
    }

    fn dfs(&mut self, node: Node, sink: &mut dyn FnMut(MixedCell)) -> Result<(), MixedVolumeError> {
        let en = self.en;
        let Some(j) = en.pick_support(&node) else {
            sink(en.make_cell(&node.chosen)?);
            return Ok(());
        };
        let s = &en.sups[j];
        for e in 0..s.edges.len() {
            if !node.compat.get(s.edge_base + e) {
                continue;
            }
            if let Some(child) = self.extend(&node, j, e)? {
                self.dfs(child, sink)?;
            }
        }
        Ok(())
    }
}

/// `⟨a − b, α⟩ = ω(b) − ω(a)`.
fn edge_equation(s: &RedSupport, a: usize, b: usize) -> (Vec<f64>, f64) {
    let d = s.pts[a].iter().zip(&s.pts[b]).map(|(x, y)| x - y).collect();
    (d, s.lifts[b] - s.lifts[a])
}

fn support_rows(s: &RedSupport, edge: (usize, usize), param: &Param) -> (Vec<f64>, Vec<f64>) {
    let mut g = Vec::new();
    let mut h = Vec::new();
    append_rows(s, edge, param, &mut g, &mut h);
    (g, h)
}

/// Rows `⟨c − a, p + M z⟩ + ω(c) − ω(a) ≥ 0` for every non-edge point `c`.
fn append_rows(s: &RedSupport, (a, b): (usize, usize), param: &Param, g: &mut Vec<f64>, h: &mut Vec<f64>) {
    let f = param.free;
    let pa = &s.pts[a];
    for (ci, pc) in s.pts.iter().enumerate() {
        if ci == a || ci == b {
            continue;
        }
        let start = g.len();
        g.resize(start + f, 0.0);
        let mut dp = 0.0;
        for (i, (x, y)) in pc.iter().zip(pa).enumerate() {
            let di = x - y;
            if di != 0.0 {
                dp += di * param.p[i];
                let mrow = &param.m[i * f..(i + 1) * f];
                for (gv, mv) in g[start..].iter_mut().zip(mrow) {
                    *gv += di * mv;
                }
            }
        }
        h.push(-(dp + s.lifts[ci] - s.lifts[a]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells_for(supports: Vec<Vec<Vec<i64>>>, seed: u64) -> Vec<MixedCell> {
        enumerate_cells(&lift_supports(&supports, seed)).unwrap()
    }

    #[test]
    fn lifting_is_deterministic() {
        let s = vec![vec![vec![0], vec![1]]];
        let a = lift_supports(&s, 42);
        assert_eq!(a, lift_supports(&s, 42));
        assert_eq!(a[0].lifts.len(), 2);
        assert!(a[0].lifts.iter().all(|&w| w > 0.0 && w < 1.0));
    }

    #[test]
    fn linear_system_one_cell() {
        let s = vec![vec![0, 0], vec![1, 0], vec![0, 1]];
        for seed in 0..5 {
            let cells = cells_for(vec![s.clone(), s.clone()], seed);
            assert_eq!(cells.len(), 1);
            assert_eq!(cells[0].volume, 1);
        }
    }

    #[test]
    fn binomial_cell_volume() {
        let cells = cells_for(
            vec![vec![vec![3, 1], vec![0, 0]], vec![vec![1, 2], vec![0, 0]]],
            7,
        );
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].volume, 5);
    }

    #[test]
    fn quadrics() {
        // x^2 + y^2 - 5, xy - 2
        let s1 = vec![vec![2, 0], vec![0, 2], vec![0, 0]];
        let s2 = vec![vec![1, 1], vec![0, 0]];
        for seed in [1, 2, 3] {
            let cells = cells_for(vec![s1.clone(), s2.clone()], seed);
            assert_eq!(cells.iter().map(|c| c.volume).sum::<u64>(), 4);
        }
    }

    #[test]
    fn dense_bezout() {
        // generic dense quadric and cubic in 2 variables: MV = 6
        let dense = |d: i64| {
            let mut v = Vec::new();
            for a in 0..=d {
                for b in 0..=d - a {
                    v.push(vec![a, b]);
                }
            }
            v
        };
        for seed in [3, 4] {
            let cells = cells_for(vec![dense(2), dense(3)], seed);
            assert_eq!(cells.iter().map(|c| c.volume).sum::<u64>(), 6);
        }
    }

    #[test]
    fn cell_normal_is_consistent() {
        let s1 = vec![vec![2, 0], vec![0, 2], vec![0, 0], vec![1, 1]];
        let s2 = vec![vec![1, 0], vec![0, 1], vec![0, 0]];
        let lifted = lift_supports(&[s1, s2], 11);
        for cell in enumerate_cells(&lifted).unwrap() {
            let alpha = cell.normal(&lifted);
            for (i, &(a, b)) in cell.edges.iter().enumerate() {
                let val = |k: usize| {
                    lifted[i].points[k].iter().zip(&alpha).map(|(&e, x)| e as f64 * x).sum::<f64>()
                        + lifted[i].lifts[k]
                };
                let lo = val(a);
                assert!((lo - val(b)).abs() < 1e-10);
                for k in 0..lifted[i].points.len() {
                    if k != a && k != b {
                        assert!(val(k) > lo);
                    }
                }
            }
        }
    }

    #[test]
    fn determinant() {
        assert_eq!(integer_determinant(&[vec![3, 1], vec![1, 2]]).unwrap(), 5);
        assert_eq!(integer_determinant(&[vec![0, 1], vec![1, 0]]).unwrap(), -1);
        assert_eq!(
            integer_determinant(&[vec![2, 0, 1], vec![1, 3, 2], vec![1, 1, 1]]).unwrap(),
            0
        );
    }
}
