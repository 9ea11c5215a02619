//! Real and physical filtering of endpoints, Cayley-Menger dimension and
//! symmetry orbits under relabelling of the bodies.

use std::cmp::Ordering;

use itertools::Itertools;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acsys::{ac_residual, newton_refine_with, AcSystem, DistanceIndexing};
use crate::linalg::{condition_2, condition_inf, norm_inf, Lu, RMatrix};
use crate::poly::PolySystem;
use crate::tracker::SolutionSet;

pub const DEFAULT_THETA: f64 = 1e-7;
pub const CM_TOL: f64 = 1e-8;
pub const MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("distance vector has {got} entries, {n} bodies need {expected}")]
    DistanceCount { n: usize, expected: usize, got: usize },
    #[error("distances are not realisable in any Euclidean space")]
    NonEmbeddable,
    #[error("class {class} mixes isotropy orders {a} and {b}")]
    InconsistentClass { class: usize, a: usize, b: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealnessPolicy {
    pub theta: f64,
}

impl Default for RealnessPolicy {
    fn default() -> Self {
        RealnessPolicy {
            theta: DEFAULT_THETA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealSolution {
    pub variables: Vec<f64>,
    /// ∞-norm of the system at `variables`.
    pub residual: f64,
    pub condition: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSolution {
    pub distances: Vec<f64>,
    /// ∞-norm of the distance equations after refinement.
    pub residual: f64,
    /// ∞-norm condition number of the full system's Jacobian.
    pub condition: f64,
    /// 2-norm condition number of the same matrix.
    pub condition_2: f64,
    pub certified: bool,
}

fn real_eval(f: &PolySystem, x: &[f64]) -> (Vec<f64>, RMatrix) {
    let z: Vec<Complex64> = x.iter().map(|&v| v.into()).collect();
    let fz = f.eval(&z).expect("dimension");
    let jz = f.jacobian_eval(&z).expect("dimension");
    let jac = RMatrix::from_row_major(
        jz.rows(),
        jz.cols(),
        jz.data().iter().map(|c| c.re).collect(),
    );
    (fz.iter().map(|c| c.re).collect(), jac)
}

/// Plain Newton on a real square system, keeping the best iterate.
pub fn real_newton(f: &PolySystem, x0: &[f64], max_iter: usize) -> RealSolution {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut jac) = real_eval(f, &x);
    let mut res = norm_inf(&fx);
    let mut stalls = 0;
    for _ in 0..max_iter {
        let Some(lu) = Lu::factor(jac.data(), n) else {
            break;
        };
        let mut step = fx.clone();
        lu.solve(&mut step);
        if step.iter().any(|v| !v.is_finite()) {
            break;
        }
        let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a - s).collect();
        let (ft, jt) = real_eval(f, &trial);
        let rt = norm_inf(&ft);
        if rt < res {
            stalls = 0;
        } else {
            stalls += 1;
            if stalls >= 2 || !(rt.is_finite()) {
                break;
            }
        }
        if rt <= res {
            x = trial;
            fx = ft;
            jac = jt;
            res = rt;
        }
    }
    RealSolution {
        condition: condition_inf(&jac),
        variables: x,
        residual: res,
    }
}

/// Endpoints whose imaginary parts are all below `theta`, Newton-refined on
/// the real system.
pub fn filter_real(set: &SolutionSet, system: &PolySystem, policy: RealnessPolicy) -> Vec<RealSolution> {
    set.records
        .iter()
        .filter(|r| r.endpoint.iter().all(|z| z.im.abs() < policy.theta))
        .map(|r| {
            let x: Vec<f64> = r.endpoint.iter().map(|z| z.re).collect();
            real_newton(system, &x, 8)
        })
        .collect()
}

/// Real solutions with every distance strictly positive, refined on the
/// distance equations.
pub fn filter_physical(real: &[RealSolution], ac: &AcSystem) -> Vec<PhysicalSolution> {
    let k = ac.pair_count();
    real.iter()
        .filter(|s| s.variables[..k].iter().all(|&r| r > 0.0))
        .map(|s| physical_from_distances(&s.variables[..k], ac))
        .collect()
}

/// Refines a positive distance vector and records its residual and the
/// condition number of the full system at the lifted point.
pub fn physical_from_distances(d: &[f64], ac: &AcSystem) -> PhysicalSolution {
    let refined = newton_refine_with(d, &ac.masses, ac.lambda_prime, 1e-14, 40)
        .map(|r| r.distances)
        .unwrap_or_else(|_| d.to_vec());
    let residual = ac_residual(&refined, &ac.masses, ac.lambda_prime)
        .map(|f| norm_inf(&f))
        .unwrap_or(f64::INFINITY);
    let (_, jac) = real_eval(&ac.system, &ac.lift_distances(&refined));
    PhysicalSolution {
        condition: condition_inf(&jac),
        condition_2: condition_2(&jac),
        distances: refined,
        residual,
        certified: false,
    }
}

fn check_len(d: &[f64], n: usize) -> Result<DistanceIndexing, ClassifyError> {
    let idx = DistanceIndexing::new(n);
    if d.len() != idx.len() {
        return Err(ClassifyError::DistanceCount {
            n,
            expected: idx.len(),
            got: d.len(),
        });
    }
    Ok(idx)
}

/// Bordered Cayley-Menger determinant of `points` with distances divided by
/// `scale`, signed so that realisable simplices give a non-negative value.
fn cm_det(d: &[f64], idx: &DistanceIndexing, points: &[usize], scale: f64) -> f64 {
    let k = points.len();
    let m = k + 1;
    let mut a = vec![0.0; m * m];
    for i in 1..m {
        a[i] = 1.0;
        a[i * m] = 1.0;
    }
    for (p, &u) in points.iter().enumerate() {
        for (q, &v) in points.iter().enumerate() {
            if u != v {
                let r = d[idx.index(u, v).unwrap()] / scale;
                a[(p + 1) * m + q + 1] = r * r;
            }
        }
    }
    let det = Lu::factor(&a, m).map(|lu| lu.determinant()).unwrap_or(0.0);
    // det = (−1)^k 2^(k−1) ((k−1)!)² V²
    if k % 2 == 0 {
        det
    } else {
        -det
    }
}

/// Smallest `d` for which every `(d+2)`-point Cayley-Menger determinant
/// vanishes; `n−1` when the full simplex is non-degenerate.
pub fn cm_dimension(d: &[f64], n: usize, tol: f64) -> Result<usize, ClassifyError> {
    let idx = check_len(d, n)?;
    let scale = d.iter().copied().fold(0.0, f64::max);
    if !(scale > 0.0) || d.iter().any(|&r| !(r > 0.0)) {
        return Err(ClassifyError::NonEmbeddable);
    }
    let mut dim = None;
    for k in 3..=n {
        let mut all_zero = true;
        for pts in (0..n).combinations(k) {
            let v2 = cm_det(d, &idx, &pts, scale);
            if v2 < -tol {
                return Err(ClassifyError::NonEmbeddable);
            }
            if v2 > tol {
                all_zero = false;
            }
        }
        if all_zero && dim.is_none() {
            dim = Some(k - 2);
        }
    }
    Ok(dim.unwrap_or(n - 1))
}

fn tol_cmp(a: &[f64], b: &[f64], tol: f64) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > tol {
            return x.total_cmp(y);
        }
    }
    Ordering::Equal
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Lexicographic minimum of the distance vector over all relabellings, with
/// components within `tol` treated as equal.
pub fn canonical_form(d: &[f64], n: usize, tol: f64) -> Vec<f64> {
    let idx = DistanceIndexing::new(n);
    let mut best = d.to_vec();
    for sigma in (0..n).permutations(n) {
        let w = idx.permute(d, &sigma);
        if tol_cmp(&w, &best, tol) == Ordering::Less {
            best = w;
        }
    }
    best
}

/// Number of relabellings fixing `d` within `tol`.
pub fn isotropy_order(d: &[f64], n: usize, tol: f64) -> usize {
    let idx = DistanceIndexing::new(n);
    (0..n)
        .permutations(n)
        .filter(|sigma| max_diff(&idx.permute(d, sigma), d) < tol)
        .count()
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationClass {
    pub representative: Vec<f64>,
    pub dimension: usize,
    pub isotropy_order: usize,
    pub orbit_size: usize,
    pub member_count: usize,
    /// Every member carries a Krawczyk certificate.
    pub certified: bool,
    pub max_residual: f64,
    pub max_condition: f64,
    pub max_condition_2: f64,
}

/// Groups solutions by canonical form. Classes are sorted by dimension, then
/// by representative.
pub fn orbit_classify(sols: &[PhysicalSolution], n: usize) -> Result<Vec<ConfigurationClass>, ClassifyError> {
    for s in sols {
        check_len(&s.distances, n)?;
    }
    let canon: Vec<Vec<f64>> = sols.iter().map(|s| canonical_form(&s.distances, n, MATCH_TOL)).collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, c) in canon.iter().enumerate() {
        match groups
            .iter_mut()
            .find(|g| max_diff(&canon[g[0]], c) < MATCH_TOL)
        {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    let nfact = factorial(n);
    let mut classes = Vec::with_capacity(groups.len());
    for (ci, g) in groups.iter().enumerate() {
        let rep = g
            .iter()
            .map(|&i| &canon[i])
            .min_by(|a, b| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
            .unwrap()
            .clone();
        let iso = isotropy_order(&rep, n, MATCH_TOL);
        for &i in g {
            let other = isotropy_order(&sols[i].distances, n, MATCH_TOL);
            if other != iso {
                return Err(ClassifyError::InconsistentClass {
                    class: ci,
                    a: iso,
                    b: other,
                });
            }
        }
        classes.push(ConfigurationClass {
            dimension: cm_dimension(&rep, n, CM_TOL)?,
            representative: rep,
            isotropy_order: iso,
            orbit_size: nfact / iso,
            member_count: g.len(),
            certified: g.iter().all(|&i| sols[i].certified),
            max_residual: g.iter().map(|&i| sols[i].residual).fold(0.0, f64::max),
            max_condition: g.iter().map(|&i| sols[i].condition).fold(0.0, f64::max),
            max_condition_2: g.iter().map(|&i| sols[i].condition_2).fold(0.0, f64::max),
        });
    }
    classes.sort_by(|a, b| {
        a.dimension
            .cmp(&b.dimension)
            .then_with(|| tol_cmp(&a.representative, &b.representative, 0.0))
    });
    Ok(classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dists(points: &[Vec<f64>]) -> Vec<f64> {
        let n = points.len();
        let idx = DistanceIndexing::new(n);
        idx.pairs()
            .iter()
            .map(|&(i, j)| {
                points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    fn phys(d: Vec<f64>) -> PhysicalSolution {
        PhysicalSolution {
            distances: d,
            residual: 0.0,
            condition: 1.0,
            condition_2: 1.0,
            certified: true,
        }
    }

    #[test]
    fn simplex_dimensions() {
        assert_eq!(cm_dimension(&[1.0; 10], 5, CM_TOL), Ok(4));
        assert_eq!(cm_dimension(&[1.0; 6], 4, CM_TOL), Ok(3));
        assert_eq!(cm_dimension(&[1.0; 3], 3, CM_TOL), Ok(2));
    }

    #[test]
    fn collinear_and_planar() {
        let line: Vec<Vec<f64>> = [-1.0, -0.4, 0.0, 0.4, 1.0].iter().map(|&x| vec![x]).collect();
        assert_eq!(cm_dimension(&dists(&line), 5, CM_TOL), Ok(1));
        let square = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0], vec![0.0, 0.0]];
        assert_eq!(cm_dimension(&dists(&square), 5, CM_TOL), Ok(2));
    }

    #[test]
    fn triangle_inequality_violation() {
        assert_eq!(cm_dimension(&[1.0, 1.0, 3.0], 3, CM_TOL), Err(ClassifyError::NonEmbeddable));
    }

    #[test]
    fn square_plus_center_isotropy() {
        let square = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0], vec![0.0, 0.0]];
        assert_eq!(isotropy_order(&dists(&square), 5, MATCH_TOL), 8);
        let pent: Vec<Vec<f64>> = (0..5)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
                vec![t.cos(), t.sin()]
            })
            .collect();
        assert_eq!(isotropy_order(&dists(&pent), 5, MATCH_TOL), 10);
    }

    #[test]
    fn orbit_of_collinear_three() {
        let idx = DistanceIndexing::new(3);
        let base = dists(&[vec![0.0], vec![1.0], vec![2.0]]);
        let sols: Vec<PhysicalSolution> = [[0, 1, 2], [1, 0, 2], [0, 2, 1]]
            .iter()
            .map(|s| phys(idx.permute(&base, s)))
            .collect();
        let classes = orbit_classify(&sols, 3).unwrap();
        assert_eq!(classes.len(), 1);
        assert_eq!(classes[0].isotropy_order, 2);
        assert_eq!(classes[0].orbit_size, 3);
        assert_eq!(classes[0].member_count, 3);
        assert_eq!(classes[0].dimension, 1);
        assert_eq!(classes[0].representative, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn filters() {
        use crate::acsys::{build_ac_system, MassVector};
        use crate::tracker::{PathStatus, SolutionRecord};
        let ac = build_ac_system(&MassVector::equal(3).unwrap(), -1.0).unwrap();
        let rec = |v: Vec<Complex64>| SolutionRecord {
            endpoint: v,
            residual: 0.0,
            condition: 1.0,
            status: PathStatus::Converged,
            multiplicity: 1,
        };
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let set = SolutionSet {
            records: vec![
                rec(vec![c(1.0, 1e-9), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]),
                rec(vec![c(1.0, 0.5), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]),
            ],
            dedup_tol: 1e-6,
            stats: Default::default(),
            min_separation: 1.0,
        };
        let mut real = filter_real(&set, &ac.system, RealnessPolicy::default());
        assert_eq!(real.len(), 1);
        real.push(RealSolution {
            variables: vec![-1.0, 1.0, 1.0, -2.0, 0.0, 0.0],
            residual: 0.0,
            condition: 1.0,
        });
        let phys = filter_physical(&real, &ac);
        assert_eq!(phys.len(), 1);
        assert!(phys[0].distances.iter().all(|&r| (r - 1.0).abs() < 1e-12));
    }
}
