//! Interval arithmetic and the Krawczyk existence/uniqueness test.
//!
//! Rust exposes no portable control over the FPU rounding mode, so every
//! elementary interval operation computes with round-to-nearest and then
//! moves each endpoint outward by [`ULPS`] units in the last place. A
//! correctly rounded result is within half an ulp of the exact value, so the
//! widened interval always encloses it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Lu, RMatrix};
use crate::poly::{PolySystem, Polynomial};

/// Outward widening applied after every elementary operation.
pub const ULPS: u32 = 4;

/// Description of the rounding mechanism, embedded in reports.
pub const RIGOR_MECHANISM: &str = "round-to-nearest with 4-ulp outward inflation per operation";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("polynomial {0} has a non-real coefficient")]
    ComplexCoefficient(usize),
    #[error("box has {got} components, system has {expected} variables")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Jacobian at the box center is singular")]
    SingularJacobian,
}

fn down(mut x: f64) -> f64 {
    for _ in 0..ULPS {
        x = x.next_down();
    }
    x
}

fn up(mut x: f64) -> f64 {
    for _ in 0..ULPS {
        x = x.next_up();
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    /// `[x − r, x + r]`, rounded outward.
    pub fn ball(x: f64, r: f64) -> Self {
        Interval {
            lo: down(x - r),
            hi: up(x + r),
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// Strict containment in the interior of `other`.
    pub fn interior_of(&self, other: &Interval) -> bool {
        other.lo < self.lo && self.hi < other.hi
    }

    pub fn add(self, o: Interval) -> Interval {
        Interval {
            lo: down(self.lo + o.lo),
            hi: up(self.hi + o.hi),
        }
    }

    pub fn sub(self, o: Interval) -> Interval {
        Interval {
            lo: down(self.lo - o.hi),
            hi: up(self.hi - o.lo),
        }
    }

    pub fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn mul(self, o: Interval) -> Interval {
        let p = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval {
            lo: down(lo),
            hi: up(hi),
        }
    }

    pub fn scale(self, c: f64) -> Interval {
        self.mul(Interval::point(c))
    }

    pub fn abs(self) -> Interval {
        if self.lo >= 0.0 {
            self
        } else if self.hi <= 0.0 {
            self.neg()
        } else {
            Interval {
                lo: 0.0,
                hi: self.hi.max(-self.lo),
            }
        }
    }

    /// `x^e`; even powers are evaluated on `|x|`, so they never dip below 0.
    pub fn powi(self, e: u32) -> Interval {
        if e == 0 {
            return Interval::point(1.0);
        }
        let base = if e % 2 == 0 { self.abs() } else { self };
        let mut acc = base;
        for _ in 1..e {
            acc = acc.mul(base);
        }
        if e % 2 == 0 {
            acc.lo = acc.lo.max(0.0);
        }
        acc
    }

    /// Distance from `self` to the boundary of `outer`, negative when `self`
    /// sticks out.
    pub fn margin_in(&self, outer: &Interval) -> f64 {
        (self.lo - outer.lo).min(outer.hi - self.hi)
    }
}

/// The ∞-norm ball `[x − r, x + r]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    pub components: Vec<Interval>,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl IntervalBox {
    pub fn new(center: &[f64], radius: f64) -> Self {
        IntervalBox {
            components: center.iter().map(|&x| Interval::ball(x, radius)).collect(),
            center: center.to_vec(),
            radius,
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn subset_of(&self, other: &IntervalBox) -> bool {
        self.components
            .iter()
            .zip(&other.components)
            .all(|(a, b)| a.subset_of(b))
    }

    pub fn disjoint_from(&self, other: &IntervalBox) -> bool {
        self.components
            .iter()
            .zip(&other.components)
            .any(|(a, b)| a.hi < b.lo || b.hi < a.lo)
    }
}

fn real_coefficients(p: &Polynomial, index: usize) -> Result<(), CertifyError> {
    if p.terms().any(|(_, c)| c.im != 0.0) {
        return Err(CertifyError::ComplexCoefficient(index));
    }
    Ok(())
}

fn eval_poly(p: &Polynomial, x: &[Interval]) -> Interval {
    let mut acc = Interval::point(0.0);
    for (m, c) in p.terms() {
        let mut t = Interval::point(c.re);
        for (v, &e) in m.exponents().iter().enumerate() {
            if e > 0 {
                t = t.mul(x[v].powi(e));
            }
        }
        acc = acc.add(t);
    }
    acc
}

fn check_dim(f: &PolySystem, got: usize) -> Result<(), CertifyError> {
    if f.nvars() != got {
        return Err(CertifyError::DimensionMismatch {
            expected: f.nvars(),
            got,
        });
    }
    for (i, p) in f.polys().iter().enumerate() {
        real_coefficients(p, i)?;
    }
    Ok(())
}

/// Componentwise enclosure of `F` over the box.
pub fn interval_eval(f: &PolySystem, bx: &IntervalBox) -> Result<Vec<Interval>, CertifyError> {
    check_dim(f, bx.dim())?;
    Ok(f.polys().iter().map(|p| eval_poly(p, &bx.components)).collect())
}

/// Enclosure of the Jacobian over the box, row-major.
pub fn interval_jacobian(f: &PolySystem, x: &[Interval]) -> Vec<Interval> {
    let n = f.nvars();
    let mut out = Vec::with_capacity(f.len() * n);
    for p in f.polys() {
        for v in 0..n {
            out.push(eval_poly(&p.derivative(v), x));
        }
    }
    out
}

fn real_jacobian(f: &PolySystem, x: &[f64]) -> Vec<f64> {
    let z: Vec<num_complex::Complex64> = x.iter().map(|&v| v.into()).collect();
    let jac = f.jacobian_eval(&z).expect("dimension checked");
    jac.data().iter().map(|c| c.re).collect()
}

/// `K = x − Y F(x) + (I − Y DF([x]))([x] − x)` with `Y ≈ DF(x)⁻¹`.
pub fn krawczyk_operator(f: &PolySystem, bx: &IntervalBox) -> Result<IntervalBox, CertifyError> {
    check_dim(f, bx.dim())?;
    let n = f.nvars();
    if f.len() != n {
        return Err(CertifyError::DimensionMismatch {
            expected: n,
            got: f.len(),
        });
    }
    let x = &bx.center;
    let lu = Lu::factor(&real_jacobian(f, x), n).ok_or(CertifyError::SingularJacobian)?;
    let y: RMatrix = lu.inverse();
    if y.data().iter().any(|v| !v.is_finite()) {
        return Err(CertifyError::SingularJacobian);
    }
    let xp: Vec<Interval> = x.iter().map(|&v| Interval::point(v)).collect();
    let fx: Vec<Interval> = f.polys().iter().map(|p| eval_poly(p, &xp)).collect();
    let dfb = interval_jacobian(f, &bx.components);
    let delta: Vec<Interval> = bx
        .components
        .iter()
        .zip(x)
        .map(|(c, &v)| c.sub(Interval::point(v)))
        .collect();

    let mut comps = Vec::with_capacity(n);
    for i in 0..n {
        // (Y F(x))_i
        let mut yf = Interval::point(0.0);
        for k in 0..n {
            yf = yf.add(fx[k].scale(y[(i, k)]));
        }
        let mut acc = Interval::point(x[i]).sub(yf);
        for j in 0..n {
            // (I − Y DF([x]))_ij
            let mut m = Interval::point(if i == j { 1.0 } else { 0.0 });
            for k in 0..n {
                m = m.sub(dfb[k * n + j].scale(y[(i, k)]));
            }
            acc = acc.add(m.mul(delta[j]));
        }
        comps.push(acc);
    }
    Ok(IntervalBox {
        components: comps,
        center: x.clone(),
        radius: bx.radius,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertStatus {
    CertifiedUnique,
    NotCertified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationResult {
    pub status: CertStatus,
    pub krawczyk_box: Option<IntervalBox>,
    /// Smallest distance from the Krawczyk box to the boundary of the input
    /// box; negative when not contained.
    pub containment_margin: f64,
    pub reason: Option<String>,
    pub rigor: String,
}

/// Runs the Krawczyk test on the box of radius `r` around `x`.
pub fn certify_solution(f: &PolySystem, x: &[f64], r: f64) -> Result<CertificationResult, CertifyError> {
    let bx = IntervalBox::new(x, r);
    match krawczyk_operator(f, &bx) {
        Ok(k) => {
            let margin = k
                .components
                .iter()
                .zip(&bx.components)
                .map(|(a, b)| a.margin_in(b))
                .fold(f64::INFINITY, f64::min);
            let inside = k
                .components
                .iter()
                .zip(&bx.components)
                .all(|(a, b)| a.interior_of(b));
            Ok(CertificationResult {
                status: if inside {
                    CertStatus::CertifiedUnique
                } else {
                    CertStatus::NotCertified
                },
                krawczyk_box: Some(k),
                containment_margin: margin,
                reason: (!inside).then(|| "Krawczyk box not inside the input box".to_string()),
                rigor: RIGOR_MECHANISM.to_string(),
            })
        }
        Err(CertifyError::SingularJacobian) => Ok(CertificationResult {
            status: CertStatus::NotCertified,
            krawczyk_box: None,
            containment_margin: f64::NEG_INFINITY,
            reason: Some("singular Jacobian at the center".to_string()),
            rigor: RIGOR_MECHANISM.to_string(),
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Polynomial;
    use num_complex::Complex64;

    fn sys(nvars: usize, polys: &[&[(f64, &[u32])]]) -> PolySystem {
        let polys = polys
            .iter()
            .map(|t| {
                Polynomial::from_terms(nvars, t.iter().map(|&(c, e)| (Complex64::new(c, 0.0), e.to_vec())))
                    .unwrap()
            })
            .collect();
        PolySystem::new(nvars, polys).unwrap()
    }

    #[test]
    fn square_over_symmetric_interval() {
        let f = sys(1, &[&[(1.0, &[2])]]);
        let bx = IntervalBox {
            components: vec![Interval::new(-1.0, 1.0)],
            center: vec![0.0],
            radius: 1.0,
        };
        let v = interval_eval(&f, &bx).unwrap();
        assert!(v[0].lo <= 0.0 && v[0].lo > -1e-300 && v[0].hi >= 1.0);
    }

    #[test]
    fn sum_is_tight_up_to_rounding() {
        let f = sys(2, &[&[(1.0, &[1, 0]), (1.0, &[0, 1])]]);
        let bx = IntervalBox {
            components: vec![Interval::new(0.0, 1.0), Interval::new(2.0, 3.0)],
            center: vec![0.5, 2.5],
            radius: 0.5,
        };
        let v = interval_eval(&f, &bx).unwrap()[0];
        assert!(v.lo <= 2.0 && v.hi >= 4.0);
        assert!(2.0 - v.lo < 1e-14 && v.hi - 4.0 < 1e-14);
    }

    #[test]
    fn point_box() {
        let f = sys(1, &[&[(0.1, &[3]), (-0.3, &[0])]]);
        let bx = IntervalBox::new(&[0.7], 0.0);
        let v = interval_eval(&f, &bx).unwrap()[0];
        let exact = 0.1 * 0.7f64.powi(3) - 0.3;
        assert!(v.contains(exact));
        assert!(v.width() < 1e-14);
    }

    #[test]
    fn linear_krawczyk() {
        let f = sys(1, &[&[(1.0, &[1]), (-1.0, &[0])]]);
        let r = certify_solution(&f, &[1.0], 1e-8).unwrap();
        assert_eq!(r.status, CertStatus::CertifiedUnique);
        let k = r.krawczyk_box.unwrap().components[0];
        assert!(k.contains(1.0) && k.width() < 1e-14);
    }

    #[test]
    fn sqrt_two() {
        let f = sys(1, &[&[(1.0, &[2]), (-2.0, &[0])]]);
        let r = certify_solution(&f, &[1.41421356237], 1e-8).unwrap();
        assert_eq!(r.status, CertStatus::CertifiedUnique);
        assert!(r.containment_margin > 0.0);
        let bad = certify_solution(&f, &[1.5], 1e-8).unwrap();
        assert_eq!(bad.status, CertStatus::NotCertified);
        assert!(bad.containment_margin < 0.0);
    }

    #[test]
    fn singular_center() {
        let f = sys(1, &[&[(1.0, &[2])]]);
        assert_eq!(
            krawczyk_operator(&f, &IntervalBox::new(&[0.0], 1e-8)),
            Err(CertifyError::SingularJacobian)
        );
        let r = certify_solution(&f, &[0.0], 1e-8).unwrap();
        assert_eq!(r.status, CertStatus::NotCertified);
    }

    #[test]
    fn even_power_of_negative_interval() {
        let v = Interval::new(-3.0, -2.0).powi(2);
        assert!(v.lo <= 4.0 && v.hi >= 9.0 && v.lo > 3.99);
        let w = Interval::new(-2.0, 1.0).powi(3);
        assert!(w.lo <= -8.0 && w.hi >= 1.0);
    }
}
