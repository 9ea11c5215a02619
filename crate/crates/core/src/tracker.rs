//! Predictor-corrector path tracking for homotopies `H(x, u)`, `u ∈ [0, 1]`.
//!
//! The predictor is classical fourth-order Runge-Kutta on the Davidenko
//! equation `H_x ẋ = −H_u`; the corrector is Newton at fixed `u` with a dense
//! LU factorisation at every iteration. Step sizes are halved when the
//! corrector fails and doubled after consecutive successes. Coordinates are
//! affine; a path whose norm passes `divergence_norm` is abandoned.

use std::f64::consts::TAU;

use num_bigint::BigUint;
use num_complex::Complex64;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm_inf, CMatrix, Lu};
use crate::orchestrate::{run_job, JobSpec, JobStats, PathSource};
use crate::poly::{EvalWorkspace, Monomial, PolySystem, Polynomial};
use crate::polyhedral::PolyhedralPlan;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("system is not square: {eqs} equations in {vars} variables")]
    NotSquare { eqs: usize, vars: usize },
    #[error("{paths} paths exceed the path budget of {budget}")]
    BudgetExceeded { paths: BigUint, budget: u64 },
    #[error("singular exponent matrix in a mixed cell")]
    SingularCell,
    #[error("integer overflow while solving a binomial start system")]
    Overflow,
    #[error(transparent)]
    MixedVolume(#[from] crate::mixedcells::MixedVolumeError),
    #[error(transparent)]
    Job(#[from] crate::orchestrate::JobError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Newton step size (relative to `max(1, ‖x‖∞)`) accepted by the corrector.
    pub corrector_tol: f64,
    pub max_corrector_iters: usize,
    pub divergence_norm: f64,
    /// Relative Newton step size required of a refined endpoint.
    pub endpoint_tol: f64,
    /// Newton iterations allowed for endpoint refinement at `u = 1`.
    pub max_t_refinements: usize,
    /// Step underflow closer than this to `u = 1` hands over to endpoint
    /// refinement instead of failing the path.
    pub endgame_gap: f64,
    pub max_steps: usize,
}

impl Default for TrackerOptions {
    fn default() -> Self {
        TrackerOptions {
            initial_step: 0.05,
            min_step: 1e-8,
            max_step: 0.1,
            corrector_tol: 1e-9,
            max_corrector_iters: 3,
            divergence_norm: 1e14,
            endpoint_tol: 1e-12,
            max_t_refinements: 12,
            endgame_gap: 1e-6,
            max_steps: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathStatus {
    Converged,
    Diverged,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub status: PathStatus,
    pub endpoint: Vec<Complex64>,
    /// Relative backward error `max_i |f_i(x)| / Σ_terms |c x^a|` at `u = 1`.
    pub residual: f64,
    /// `‖J‖∞ ‖J⁻¹‖∞` at the endpoint.
    pub condition_estimate: f64,
    pub steps_taken: usize,
}

/// A square homotopy in the unit parameter interval.
pub trait Homotopy: Sync {
    fn nvars(&self) -> usize;

    /// `H(x, u)` into `h`, the row-major `H_x` into `hx` and `∂H/∂u` into
    /// `hu` when requested.
    fn eval(
        &self,
        x: &[Complex64],
        u: f64,
        h: &mut [Complex64],
        hx: &mut [Complex64],
        hu: Option<&mut [Complex64]>,
        ws: &mut HomotopyWorkspace,
    );

    /// The system `H(·, 1)`.
    fn end_system(&self) -> &PolySystem;
}

/// Scratch buffers for homotopy evaluation.
#[derive(Default, Clone, Debug)]
pub struct HomotopyWorkspace {
    pub eval: EvalWorkspace,
    pub f: Vec<Complex64>,
    pub jac: Vec<Complex64>,
    pub coeffs: Vec<Complex64>,
}

/// `H(x, u) = (1 − u) γ Q(x) + u P(x)`.
pub struct LinearHomotopy<'a> {
    pub start: &'a PolySystem,
    pub target: &'a PolySystem,
    pub gamma: Complex64,
}

impl Homotopy for LinearHomotopy<'_> {
    fn nvars(&self) -> usize {
        self.target.nvars()
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
        let n = x.len();
        ws.f.resize(n, Complex64::default());
        ws.jac.resize(n * n, Complex64::default());
        self.start
            .eval_into(x, None, &mut ws.f, Some(&mut ws.jac), &mut ws.eval);
        self.target.eval_into(x, None, h, Some(hx), &mut ws.eval);
        let a = self.gamma * (1.0 - u);
        if let Some(hu) = hu {
            for i in 0..n {
                hu[i] = h[i] - self.gamma * ws.f[i];
            }
        }
        for i in 0..n {
            h[i] = h[i] * u + a * ws.f[i];
        }
        for (d, s) in hx.iter_mut().zip(&ws.jac) {
            *d = *d * u + a * s;
        }
    }

    fn end_system(&self) -> &PolySystem {
        self.target
    }
}

/// Working memory for [`track_path`].
struct Tracker<'a, H: Homotopy + ?Sized> {
    h: &'a H,
    opts: &'a TrackerOptions,
    n: usize,
    ws: HomotopyWorkspace,
    f: Vec<Complex64>,
    jac: Vec<Complex64>,
    hu: Vec<Complex64>,
    lu: Lu<Complex64>,
}

impl<'a, H: Homotopy + ?Sized> Tracker<'a, H> {
    fn new(h: &'a H, opts: &'a TrackerOptions) -> Self {
        let n = h.nvars();
        Tracker {
            h,
            opts,
            n,
            ws: HomotopyWorkspace::default(),
            f: vec![Complex64::default(); n],
            jac: vec![Complex64::default(); n * n],
            hu: vec![Complex64::default(); n],
            lu: Lu::new(n),
        }
    }

    /// Path tangent `−H_x⁻¹ H_u`.
    fn tangent(&mut self, x: &[Complex64], u: f64) -> Option<Vec<Complex64>> {
        self.h
            .eval(x, u, &mut self.f, &mut self.jac, Some(&mut self.hu), &mut self.ws);
        if !self.lu.refactor(&self.jac) {
            return None;
        }
        let mut v: Vec<Complex64> = self.hu.iter().map(|z| -z).collect();
        self.lu.solve(&mut v);
        v.iter().all(|z| z.re.is_finite() && z.im.is_finite()).then_some(v)
    }

    fn rk4(&mut self, x: &[Complex64], u: f64, du: f64) -> Option<Vec<Complex64>> {
        let axpy = |x: &[Complex64], a: f64, k: &[Complex64]| -> Vec<Complex64> {
            x.iter().zip(k).map(|(xi, ki)| xi + ki * a).collect()
        };
        let k1 = self.tangent(x, u)?;
        let k2 = self.tangent(&axpy(x, du / 2.0, &k1), u + du / 2.0)?;
        let k3 = self.tangent(&axpy(x, du / 2.0, &k2), u + du / 2.0)?;
        let k4 = self.tangent(&axpy(x, du, &k3), u + du)?;
        Some(
            (0..self.n)
                .map(|i| x[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (du / 6.0))
                .collect(),
        )
    }

    /// One Newton step at fixed `u`; returns the relative step size.
    fn newton_step(&mut self, x: &mut [Complex64], u: f64) -> Option<f64> {
        self.h
            .eval(x, u, &mut self.f, &mut self.jac, None, &mut self.ws);
        if !self.lu.refactor(&self.jac) {
            return None;
        }
        let mut dx = self.f.clone();
        self.lu.solve(&mut dx);
        let scale = norm_inf(x).max(1.0);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi -= d;
        }
        let s = norm_inf(&dx) / scale;
        s.is_finite().then_some(s)
    }

    fn correct(&mut self, x: &mut [Complex64], u: f64) -> bool {
        let mut prev = f64::INFINITY;
        for _ in 0..self.opts.max_corrector_iters {
            let Some(s) = self.newton_step(x, u) else {
                return false;
            };
            if s <= self.opts.corrector_tol {
                return true;
            }
            if s > 0.5 * prev {
                return false;
            }
            prev = s;
        }
        false
    }

    fn refine_end(&mut self, x: &mut [Complex64]) -> bool {
        let mut prev = f64::INFINITY;
        let mut converged = false;
        for _ in 0..self.opts.max_t_refinements {
            let Some(s) = self.newton_step(x, 1.0) else {
                return false;
            };
            if s <= self.opts.endpoint_tol {
                converged = true;
                break;
            }
            if norm_inf(x) > self.opts.divergence_norm || (prev < 1e-6 && s > 0.5 * prev) {
                break;
            }
            prev = s;
        }
        // one extra step lands on the rounding floor
        if converged {
            let mut y = x.to_vec();
            if self.newton_step(&mut y, 1.0).is_some() {
                x.copy_from_slice(&y);
            }
        }
        converged
    }
}

/// Tracks one path of `h` from `x0` at `u = 0` to `u = 1`.
pub fn track_path<H: Homotopy + ?Sized>(h: &H, x0: &[Complex64], opts: &TrackerOptions) -> PathResult {
    let mut tr = Tracker::new(h, opts);
    let mut x = x0.to_vec();
    let mut u = 0.0;
    let mut step = opts.initial_step;
    let mut streak = 0;
    let mut steps = 0;
    let finish = |status, endpoint: Vec<Complex64>, steps| {
        let (residual, condition_estimate) = endpoint_quality(h.end_system(), &endpoint);
        PathResult {
            status,
            endpoint,
            residual,
            condition_estimate,
            steps_taken: steps,
        }
    };
    if !tr.correct(&mut x, 0.0) {
        return finish(PathStatus::Failed, x, 0);
    }
    while u < 1.0 {
        if steps >= opts.max_steps {
            return finish(PathStatus::Failed, x, steps);
        }
        let du = step.min(1.0 - u);
        let next = tr.rk4(&x, u, du).and_then(|mut xp| {
            let un = if 1.0 - (u + du) < 1e-15 { 1.0 } else { u + du };
            tr.correct(&mut xp, un).then_some((xp, un))
        });
        match next {
            Some((xp, un)) => {
                x = xp;
                u = un;
                steps += 1;
                if norm_inf(&x) > opts.divergence_norm {
                    return finish(PathStatus::Diverged, x, steps);
                }
                streak += 1;
                if streak >= 2 {
                    step = (step * 2.0).min(opts.max_step);
                    streak = 0;
                }
            }
            None => {
                streak = 0;
                step *= 0.5;
                if step < opts.min_step {
                    if u >= 1.0 - opts.endgame_gap {
                        break;
                    }
                    return finish(PathStatus::Failed, x, steps);
                }
            }
        }
    }
    let status = if tr.refine_end(&mut x) {
        PathStatus::Converged
    } else if norm_inf(&x) > opts.divergence_norm {
        PathStatus::Diverged
    } else {
        PathStatus::Failed
    };
    let mut result = finish(status, x, steps);
    if status == PathStatus::Converged && !result.condition_estimate.is_finite() {
        result.status = PathStatus::Failed;
    }
    result
}

/// Relative backward error and Jacobian condition of `system` at `x`.
pub fn endpoint_quality(system: &PolySystem, x: &[Complex64]) -> (f64, f64) {
    let n = system.nvars();
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return (f64::INFINITY, f64::INFINITY);
    }
    let mut f = vec![Complex64::default(); system.len()];
    let mut jac = vec![Complex64::default(); system.len() * n];
    system.eval_into(x, None, &mut f, Some(&mut jac), &mut EvalWorkspace::default());
    let mags: Vec<Complex64> = system
        .coefficients()
        .iter()
        .map(|c| Complex64::new(c.norm(), 0.0))
        .collect();
    let ax: Vec<Complex64> = x.iter().map(|z| Complex64::new(z.norm(), 0.0)).collect();
    let mut scale = vec![Complex64::default(); system.len()];
    system.eval_into(&ax, Some(&mags), &mut scale, None, &mut EvalWorkspace::default());
    let residual = f
        .iter()
        .zip(&scale)
        .map(|(fi, si)| fi.norm() / si.re.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let cond = if system.is_square() {
        crate::linalg::condition_inf(&CMatrix::from_row_major(n, n, jac))
    } else {
        f64::INFINITY
    };
    (residual, cond)
}

/// Random unit-modulus complex number.
pub fn random_unit(rng: &mut impl Rng) -> Complex64 {
    Complex64::from_polar(1.0, rng.gen::<f64>() * TAU)
}

/// Start system `a_j x_j^{d_j} − b_j` with unit-modulus random `a_j, b_j`.
#[derive(Clone, Debug)]
pub struct TotalDegreeStart {
    pub system: PolySystem,
    pub degrees: Vec<u32>,
    /// `(b_j / a_j)^{1/d_j}`, principal branch.
    base_roots: Vec<Complex64>,
    pub gamma: Complex64,
}

impl TotalDegreeStart {
    pub fn new(target: &PolySystem, seed: u64) -> Result<Self, TrackerError> {
        if !target.is_square() {
            return Err(TrackerError::NotSquare {
                eqs: target.len(),
                vars: target.nvars(),
            });
        }
        let n = target.nvars();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = random_unit(&mut rng);
        let degrees = target.degrees();
        let mut polys = Vec::with_capacity(n);
        let mut base_roots = Vec::with_capacity(n);
        for (j, &d) in degrees.iter().enumerate() {
            let a = random_unit(&mut rng);
            let b = random_unit(&mut rng);
            let mut p = Polynomial::zero(n);
            p.add_term(a, Monomial::var(n, j, d));
            p.add_term(-b, Monomial::one(n));
            polys.push(p);
            base_roots.push((b / a).powf(1.0 / d as f64));
        }
        Ok(TotalDegreeStart {
            system: PolySystem::new(n, polys).expect("square by construction"),
            degrees,
            base_roots,
            gamma,
        })
    }

    pub fn path_count(&self) -> BigUint {
        self.degrees.iter().fold(BigUint::from(1u32), |a, &d| a * BigUint::from(d))
    }

    /// Start point number `index` in mixed-radix order (last variable fastest).
    pub fn start_point(&self, mut index: u64) -> Vec<Complex64> {
        let n = self.degrees.len();
        let mut x = vec![Complex64::default(); n];
        for j in (0..n).rev() {
            let d = self.degrees[j] as u64;
            let k = index % d;
            index /= d;
            x[j] = self.base_roots[j] * Complex64::from_polar(1.0, TAU * k as f64 / d as f64);
        }
        x
    }

    pub fn start_points(&self) -> Vec<Vec<Complex64>> {
        let total = self.path_count().to_u64().expect("enumerable start system");
        (0..total).map(|i| self.start_point(i)).collect()
    }
}

/// Build the total-degree start system and all its start points.
pub fn build_total_degree_start(
    target: &PolySystem,
    seed: u64,
    budget: u64,
) -> Result<(TotalDegreeStart, Vec<Vec<Complex64>>), TrackerError> {
    let start = TotalDegreeStart::new(target, seed)?;
    check_budget(&start.path_count(), budget)?;
    let pts = start.start_points();
    Ok((start, pts))
}

pub(crate) fn check_budget(paths: &BigUint, budget: u64) -> Result<u64, TrackerError> {
    match paths.to_u64() {
        Some(p) if p <= budget => Ok(p),
        _ => Err(TrackerError::BudgetExceeded {
            paths: paths.clone(),
            budget,
        }),
    }
}

struct TotalDegreeSource<'a> {
    target: &'a PolySystem,
    start: TotalDegreeStart,
    total: u64,
    opts: TrackerOptions,
}

impl PathSource for TotalDegreeSource<'_> {
    fn total_paths(&self) -> u64 {
        self.total
    }

    fn track(&self, index: u64) -> PathResult {
        let h = LinearHomotopy {
            start: &self.start.system,
            target: self.target,
            gamma: self.start.gamma,
        };
        track_path(&h, &self.start.start_point(index), &self.opts)
    }

    fn fingerprint(&self) -> String {
        self.target.to_text()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TotalDegree,
    Polyhedral,
}

/// One kept endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub endpoint: Vec<Complex64>,
    pub residual: f64,
    pub condition: f64,
    pub status: PathStatus,
    /// Number of converged paths that landed on this endpoint.
    pub multiplicity: u32,
}

/// Deduplicated converged endpoints, sorted by coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub records: Vec<SolutionRecord>,
    pub dedup_tol: f64,
    pub stats: JobStats,
    /// Smallest ∞-norm distance between two kept endpoints.
    pub min_separation: f64,
}

fn coord_cmp(a: &[Complex64], b: &[Complex64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
        if o != std::cmp::Ordering::Equal {
            return o;
        }
    }
    std::cmp::Ordering::Equal
}

fn dist_inf(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Merges endpoints closer than `tol` (∞-norm); output sorted by coordinates.
pub fn dedup(mut results: Vec<PathResult>, tol: f64) -> (Vec<SolutionRecord>, f64) {
    results.retain(|r| r.status == PathStatus::Converged);
    results.sort_by(|a, b| coord_cmp(&a.endpoint, &b.endpoint));
    let mut kept: Vec<SolutionRecord> = Vec::new();
    // Sweep over the first real coordinate; any duplicate lies within `tol`.
    for r in results {
        let key = r.endpoint.first().map_or(0.0, |z| z.re);
        let mut merged = false;
        for k in kept.iter_mut().rev() {
            if key - k.endpoint.first().map_or(0.0, |z| z.re) > tol {
                break;
            }
            if dist_inf(&k.endpoint, &r.endpoint) < tol {
                k.multiplicity += 1;
                merged = true;
                break;
            }
        }
        if !merged {
            kept.push(SolutionRecord {
                endpoint: r.endpoint,
                residual: r.residual,
                condition: r.condition_estimate,
                status: r.status,
                multiplicity: 1,
            });
        }
    }
    let mut min_sep = f64::INFINITY;
    for i in 0..kept.len() {
        let key = kept[i].endpoint.first().map_or(0.0, |z| z.re);
        for k in kept[i + 1..].iter() {
            if k.endpoint.first().map_or(0.0, |z| z.re) - key > min_sep {
                break;
            }
            min_sep = min_sep.min(dist_inf(&kept[i].endpoint, &k.endpoint));
        }
    }
    (kept, min_sep)
}

/// Settings for [`solve_all`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveOptions {
    pub method: Method,
    pub seed: u64,
    pub tracker: TrackerOptions,
    pub job: JobSpec,
    pub dedup_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: Method::Polyhedral,
            seed: 1,
            tracker: TrackerOptions::default(),
            job: JobSpec::default(),
            dedup_tol: 1e-6,
        }
    }
}

/// Traces every start path of `target` and collects the distinct endpoints.
pub fn solve_all(target: &PolySystem, opts: &SolveOptions) -> Result<SolutionSet, TrackerError> {
    if !target.is_square() {
        return Err(TrackerError::NotSquare {
            eqs: target.len(),
            vars: target.nvars(),
        });
    }
    let results = match opts.method {
        Method::TotalDegree => {
            let start = TotalDegreeStart::new(target, opts.seed)?;
            let total = check_budget(&start.path_count(), opts.job.path_budget)?;
            let src = TotalDegreeSource {
                target,
                start,
                total,
                opts: opts.tracker.clone(),
            };
            run_job(&src, &opts.job)?
        }
        Method::Polyhedral => {
            let plan = PolyhedralPlan::new(target, opts.seed, opts.seed, opts.tracker.clone())?;
            check_budget(&BigUint::from(plan.total_paths()), opts.job.path_budget)?;
            run_job(&plan, &opts.job)?
        }
    };
    let (records, min_separation) = dedup(results.results, opts.dedup_tol);
    Ok(SolutionSet {
        records,
        dedup_tol: opts.dedup_tol,
        stats: results.stats,
        min_separation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn system(nvars: usize, polys: &[&[(f64, &[u32])]]) -> PolySystem {
        let polys = polys
            .iter()
            .map(|terms| {
                Polynomial::from_terms(
                    nvars,
                    terms.iter().map(|&(co, e)| (c(co), e.to_vec())),
                )
                .unwrap()
            })
            .collect();
        PolySystem::new(nvars, polys).unwrap()
    }

    #[test]
    fn start_points_satisfy_start_system() {
        let p = system(2, &[&[(1.0, &[3, 0]), (1.0, &[0, 1])], &[(1.0, &[1, 1]), (-2.0, &[0, 0])]]);
        let (start, pts) = build_total_degree_start(&p, 3, 100).unwrap();
        assert_eq!(pts.len(), 6);
        for x in &pts {
            let f = start.system.eval(x).unwrap();
            assert!(norm_inf(&f) < 1e-13);
        }
        assert!(matches!(
            build_total_degree_start(&p, 3, 5),
            Err(TrackerError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn univariate_square_roots() {
        let p = system(1, &[&[(1.0, &[2]), (-1.0, &[0])]]);
        let opts = SolveOptions {
            method: Method::TotalDegree,
            ..Default::default()
        };
        let set = solve_all(&p, &opts).unwrap();
        assert_eq!(set.records.len(), 2);
        assert!((set.records[0].endpoint[0] - c(-1.0)).norm() < 1e-12);
        assert!((set.records[1].endpoint[0] - c(1.0)).norm() < 1e-12);
    }

    #[test]
    fn dedup_merges_close_points() {
        let mk = |v: f64| PathResult {
            status: PathStatus::Converged,
            endpoint: vec![c(v), c(0.0)],
            residual: 0.0,
            condition_estimate: 1.0,
            steps_taken: 1,
        };
        let (kept, sep) = dedup(vec![mk(1.0), mk(2.0), mk(1.0 + 1e-9), mk(0.5)], 1e-6);
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[1].multiplicity, 2);
        assert!((sep - 0.5).abs() < 1e-12);
    }
}
