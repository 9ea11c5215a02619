//! Albouy-Chenciner equations for central configurations in mutual-distance
//! coordinates.
//!
//! For bodies `i < j` the equation reads
//!
//! ```text
//! Σ_k m_k [ S_ik (r_jk² − r_ik² − r_ij²) + S_jk (r_ik² − r_jk² − r_ij²) ] = 0
//! ```
//!
//! with `S_ab = r_ab⁻³ + λ'` and `S_aa = r_aa = 0`. The polynomial form
//! keeps `S_ab` as an unknown next to `r_ab`, tied by the constraint
//! `(S_ab − λ') r_ab³ − 1 = 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm_inf, Lu};
use crate::poly::{Monomial, PolySystem, Polynomial};

/// Normalisation that removes the dilation symmetry.
pub const DEFAULT_LAMBDA_PRIME: f64 = -1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcError {
    #[error("need at least 3 bodies, got {0}")]
    TooFewBodies(usize),
    #[error("mass {index} is not positive: {value}")]
    NonPositiveMass { index: usize, value: f64 },
    #[error("expected {expected} distances, got {got}")]
    DistanceCount { expected: usize, got: usize },
    #[error("distance {index} is not positive: {value}")]
    NonPositiveDistance { index: usize, value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassVector(Vec<f64>);

impl MassVector {
    pub fn new(masses: Vec<f64>) -> Result<Self, AcError> {
        if masses.len() < 3 {
            return Err(AcError::TooFewBodies(masses.len()));
        }
        for (index, &value) in masses.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(AcError::NonPositiveMass { index, value });
            }
        }
        Ok(MassVector(masses))
    }

    pub fn equal(n: usize) -> Result<Self, AcError> {
        Self::new(vec![1.0; n])
    }

    pub fn bodies(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_equal(&self) -> bool {
        self.0.iter().all(|&m| m == self.0[0])
    }
}

/// Lexicographic list of body pairs `(i, j)`, `i < j` (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceIndexing {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl DistanceIndexing {
    pub fn new(n: usize) -> Self {
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i, j));
            }
        }
        DistanceIndexing { n, pairs }
    }

    pub fn bodies(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Index of the unordered pair `{a, b}`; `None` when `a == b`.
    pub fn index(&self, a: usize, b: usize) -> Option<usize> {
        if a == b {
            return None;
        }
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        // pairs before row i: i*n - i(i+1)/2
        Some(i * self.n - i * (i + 1) / 2 + (j - i - 1))
    }

    /// Applies a body permutation: the returned vector `w` satisfies
    /// `w[idx(σi, σj)] = d[idx(i, j)]`.
    pub fn permute(&self, d: &[f64], sigma: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; d.len()];
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            out[self.index(sigma[i], sigma[j]).unwrap()] = d[k];
        }
        out
    }
}

/// The polynomialised Albouy-Chenciner system.
///
/// Variables: `r` for every pair in [`DistanceIndexing`] order, then `S` in
/// the same order. Equations: the distance equations, then
/// `(S − λ') r³ − 1`.
#[derive(Clone, Debug)]
pub struct AcSystem {
    pub system: PolySystem,
    pub lambda_prime: f64,
    pub masses: MassVector,
    pub indexing: DistanceIndexing,
}

impl AcSystem {
    pub fn pair_count(&self) -> usize {
        self.indexing.len()
    }

    /// Full variable vector `(r, r⁻³ + λ')` for a distance vector.
    pub fn lift_distances(&self, d: &[f64]) -> Vec<f64> {
        let mut v = d.to_vec();
        v.extend(d.iter().map(|r| 1.0 / (r * r * r) + self.lambda_prime));
        v
    }
}

pub fn build_ac_system(masses: &MassVector, lambda_prime: f64) -> Result<AcSystem, AcError> {
    let n = masses.bodies();
    if n < 3 {
        return Err(AcError::TooFewBodies(n));
    }
    let idx = DistanceIndexing::new(n);
    let k = idx.len();
    let nvars = 2 * k;
    let re = |x: f64| Complex64::new(x, 0.0);

    let r2 = |a: usize, b: usize| -> Polynomial {
        match idx.index(a, b) {
            None => Polynomial::zero(nvars),
            Some(p) => {
                let mut q = Polynomial::zero(nvars);
                q.add_term(re(1.0), Monomial::var(nvars, p, 2));
                q
            }
        }
    };
    let big_s = |a: usize, b: usize| -> Polynomial {
        match idx.index(a, b) {
            None => Polynomial::zero(nvars),
            Some(p) => Polynomial::variable(nvars, k + p),
        }
    };

    let m = masses.as_slice();
    let mut polys = Vec::with_capacity(nvars);
    for &(i, j) in idx.pairs() {
        let mut eq = Polynomial::zero(nvars);
        let rij2 = r2(i, j);
        for (kk, &mk) in m.iter().enumerate() {
            let rik2 = r2(i, kk);
            let rjk2 = r2(j, kk);
            let a = &(&rjk2 - &rik2) - &rij2;
            let b = &(&rik2 - &rjk2) - &rij2;
            let term = &(&big_s(i, kk) * &a) + &(&big_s(j, kk) * &b);
            eq = &eq + &term.scale(re(mk));
        }
        polys.push(eq);
    }
    for p in 0..k {
        let mut exps = vec![0u32; nvars];
        exps[p] = 3;
        exps[k + p] = 1;
        let mut c = Polynomial::zero(nvars);
        c.add_term(re(1.0), Monomial::new(exps.clone()));
        exps[k + p] = 0;
        c.add_term(re(-lambda_prime), Monomial::new(exps));
        c.add_term(re(-1.0), Monomial::one(nvars));
        polys.push(c);
    }
    let system = PolySystem::new(nvars, polys).expect("consistent variable count");
    Ok(AcSystem {
        system,
        lambda_prime,
        masses: masses.clone(),
        indexing: idx,
    })
}

fn check_distances(d: &[f64], idx: &DistanceIndexing) -> Result<(), AcError> {
    if d.len() != idx.len() {
        return Err(AcError::DistanceCount {
            expected: idx.len(),
            got: d.len(),
        });
    }
    for (index, &value) in d.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(AcError::NonPositiveDistance { index, value });
        }
    }
    Ok(())
}

/// Residuals of the distance equations with `S = r⁻³ + λ'` substituted,
/// optionally with the Jacobian with respect to the distances (row-major).
fn residual_and_jacobian(
    d: &[f64],
    masses: &[f64],
    lambda_prime: f64,
    idx: &DistanceIndexing,
    mut jac: Option<&mut [f64]>,
) -> Vec<f64> {
    let k = idx.len();
    let sv = |p: Option<usize>| -> (f64, f64, f64) {
        // (r, S, dS/dr)
        match p {
            None => (0.0, 0.0, 0.0),
            Some(p) => {
                let r = d[p];
                let r3 = r * r * r;
                (r, 1.0 / r3 + lambda_prime, -3.0 / (r3 * r))
            }
        }
    };
    if let Some(j) = jac.as_deref_mut() {
        j.fill(0.0);
    }
    let mut out = vec![0.0; k];
    for (row, &(i, j)) in idx.pairs().iter().enumerate() {
        let pij = idx.index(i, j);
        let (rij, _, _) = sv(pij);
        let mut acc = 0.0;
        for (kk, &mk) in masses.iter().enumerate() {
            let pik = idx.index(i, kk);
            let pjk = idx.index(j, kk);
            let (rik, sik, dsik) = sv(pik);
            let (rjk, sjk, dsjk) = sv(pjk);
            let a = rjk * rjk - rik * rik - rij * rij;
            let b = rik * rik - rjk * rjk - rij * rij;
            acc += mk * (sik * a + sjk * b);
            if let Some(jm) = jac.as_deref_mut() {
                let mut add = |p: Option<usize>, v: f64| {
                    if let Some(p) = p {
                        jm[row * k + p] += mk * v;
                    }
                };
                add(pik, dsik * a - 2.0 * rik * sik + 2.0 * rik * sjk);
                add(pjk, 2.0 * rjk * sik + dsjk * b - 2.0 * rjk * sjk);
                add(pij, -2.0 * rij * (sik + sjk));
            }
        }
        out[row] = acc;
    }
    out
}

pub fn ac_residual(d: &[f64], masses: &MassVector, lambda_prime: f64) -> Result<Vec<f64>, AcError> {
    let idx = DistanceIndexing::new(masses.bodies());
    check_distances(d, &idx)?;
    Ok(residual_and_jacobian(d, masses.as_slice(), lambda_prime, &idx, None))
}

/// Jacobian of [`ac_residual`] with respect to the distances, row-major.
pub fn ac_jacobian(d: &[f64], masses: &MassVector, lambda_prime: f64) -> Result<Vec<f64>, AcError> {
    let idx = DistanceIndexing::new(masses.bodies());
    check_distances(d, &idx)?;
    let mut jac = vec![0.0; idx.len() * idx.len()];
    residual_and_jacobian(d, masses.as_slice(), lambda_prime, &idx, Some(&mut jac));
    Ok(jac)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub distances: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton on the distance equations (λ' = −1).
pub fn newton_refine(
    d: &[f64],
    masses: &MassVector,
    tol: f64,
    max_iter: usize,
) -> Result<Refinement, AcError> {
    newton_refine_with(d, masses, DEFAULT_LAMBDA_PRIME, tol, max_iter)
}

pub fn newton_refine_with(
    d: &[f64],
    masses: &MassVector,
    lambda_prime: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Refinement, AcError> {
    let idx = DistanceIndexing::new(masses.bodies());
    check_distances(d, &idx)?;
    let k = idx.len();
    let m = masses.as_slice();
    let mut x = d.to_vec();
    let mut jac = vec![0.0; k * k];
    let mut f = residual_and_jacobian(&x, m, lambda_prime, &idx, Some(&mut jac));
    let mut res = norm_inf(&f);
    let mut iterations = 0;
    // after reaching tol, a couple of extra steps polish to the rounding floor
    let mut polish = 2;
    while iterations < max_iter {
        if res < tol {
            if polish == 0 || iterations == 0 {
                break;
            }
            polish -= 1;
        }
        let Some(lu) = Lu::factor(&jac, k) else {
            break;
        };
        let mut step = f.clone();
        lu.solve(&mut step);
        if step.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut mu = 1.0;
        let mut accepted = None;
        while mu > 1e-6 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a - mu * s).collect();
            if trial.iter().all(|&v| v > 0.0) {
                let ft = residual_and_jacobian(&trial, m, lambda_prime, &idx, None);
                let rt = norm_inf(&ft);
                if rt < res || (res < tol && rt <= tol) {
                    accepted = Some((trial, ft, rt));
                    break;
                }
            }
            mu *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((t, ft, rt)) => {
                x = t;
                f = ft;
                res = rt;
                residual_and_jacobian(&x, m, lambda_prime, &idx, Some(&mut jac));
            }
            None => break,
        }
    }
    Ok(Refinement {
        converged: res < tol,
        distances: x,
        iterations,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn counts() {
        for (n, vars) in [(3, 6), (4, 12), (5, 20)] {
            let ac = build_ac_system(&MassVector::equal(n).unwrap(), -1.0).unwrap();
            assert_eq!(ac.system.nvars(), vars);
            assert_eq!(ac.system.len(), vars);
        }
        assert_eq!(MassVector::equal(2), Err(AcError::TooFewBodies(2)));
        assert!(MassVector::new(vec![1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn degrees() {
        let ac = build_ac_system(&MassVector::equal(4).unwrap(), -1.0).unwrap();
        let d = ac.system.degrees();
        assert!(d[..6].iter().all(|&x| x == 3));
        assert!(d[6..].iter().all(|&x| x == 4));
    }

    #[test]
    fn indexing() {
        let idx = DistanceIndexing::new(5);
        for (p, &(i, j)) in idx.pairs().iter().enumerate() {
            assert_eq!(idx.index(i, j), Some(p));
            assert_eq!(idx.index(j, i), Some(p));
        }
        assert_eq!(idx.index(2, 2), None);
    }

    #[test]
    fn equilateral_is_root() {
        let ac = build_ac_system(&MassVector::equal(3).unwrap(), -1.0).unwrap();
        // r = 1, S = 1 − 1 = 0
        let mut x = vec![c(1.0); 3];
        x.extend([c(0.0); 3]);
        let f = ac.system.eval(&x).unwrap();
        assert!(f.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn simplex_residual_zero() {
        let m = MassVector::equal(5).unwrap();
        let r = ac_residual(&[1.0; 10], &m, -1.0).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn degenerate_collinear_guess_is_not_root() {
        let m = MassVector::equal(3).unwrap();
        let r = ac_residual(&[1.0, 1.0, 2.0], &m, -1.0).unwrap();
        assert!(norm_inf(&r) > 1e-3);
        assert!(matches!(
            ac_residual(&[1.0, 0.0, 2.0], &m, -1.0),
            Err(AcError::NonPositiveDistance { index: 1, .. })
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = MassVector::new(vec![1.0, 2.0, 0.5, 1.5]).unwrap();
        let d = [1.1, 0.9, 1.3, 1.05, 0.8, 1.2];
        let jac = ac_jacobian(&d, &m, -1.0).unwrap();
        let h = 1e-6;
        for p in 0..6 {
            let mut dp = d;
            let mut dm = d;
            dp[p] += h;
            dm[p] -= h;
            let fp = ac_residual(&dp, &m, -1.0).unwrap();
            let fm = ac_residual(&dm, &m, -1.0).unwrap();
            for row in 0..6 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                assert!((fd - jac[row * 6 + p]).abs() < 1e-7, "row {row} col {p}");
            }
        }
    }

    #[test]
    fn newton_recovers_equilateral() {
        let m = MassVector::equal(3).unwrap();
        let r = newton_refine(&[1.01, 0.99, 1.0], &m, 1e-14, 50).unwrap();
        assert!(r.converged);
        for v in &r.distances {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let fixed = newton_refine(&[1.0, 1.0, 1.0], &m, 1e-14, 50).unwrap();
        assert!(fixed.converged);
        assert_eq!(fixed.iterations, 0);
        assert_eq!(fixed.distances, vec![1.0; 3]);
    }

    #[test]
    fn polynomial_and_direct_residuals_agree() {
        let m = MassVector::new(vec![1.0, 3.0, 2.0, 0.7]).unwrap();
        let ac = build_ac_system(&m, -1.0).unwrap();
        let d = [0.9, 1.2, 1.4, 1.1, 0.95, 1.3];
        let direct = ac_residual(&d, &m, -1.0).unwrap();
        let x: Vec<Complex64> = ac.lift_distances(&d).into_iter().map(c).collect();
        let f = ac.system.eval(&x).unwrap();
        for p in 0..6 {
            let scale = direct[p].abs().max(1.0);
            assert!((f[p].re - direct[p]).abs() <= 1e-13 * scale);
            assert!(f[6 + p].norm() < 1e-15);
        }
    }
}
