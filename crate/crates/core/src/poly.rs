//! Sparse multivariate polynomials over `Complex64`.
//!
//! A [`Polynomial`] keeps its terms in a map keyed by [`Monomial`], ordered
//! graded-lexicographically so iteration (and therefore every floating-point
//! accumulation) is reproducible. A [`PolySystem`] additionally carries a
//! flattened, evaluation-ready copy of its terms: evaluation caches the powers
//! of each coordinate once per point and reuses them across all terms.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigUint;
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::CMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("polynomial {index} has {got} variables, system has {expected}")]
    VariableCount {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Exponent vector of a monomial.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    /// `x_var^exp`.
    pub fn var(nvars: usize, var: usize, exp: u32) -> Self {
        let mut e = vec![0; nvars];
        e[var] = exp;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A polynomial in a fixed number of variables. Zero coefficients are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, Complex64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: impl Into<Complex64>) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(c.into(), Monomial::one(nvars));
        p
    }

    /// The polynomial `x_var`.
    pub fn variable(nvars: usize, var: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Complex64::new(1.0, 0.0), Monomial::var(nvars, var, 1));
        p
    }

    /// Builds a polynomial from `(coefficient, exponents)` pairs; repeated
    /// monomials are merged.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Complex64, Vec<u32>)>,
    {
        let mut p = Self::zero(nvars);
        for (c, e) in terms {
            if e.len() != nvars {
                return Err(PolyError::DimensionMismatch {
                    expected: nvars,
                    got: e.len(),
                });
            }
            p.add_term(c, Monomial(e));
        }
        Ok(p)
    }

    pub fn add_term(&mut self, c: Complex64, m: Monomial) {
        debug_assert_eq!(m.nvars(), self.nvars);
        let zero = Complex64::new(0.0, 0.0);
        match self.terms.entry(m) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == zero {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                if c != zero {
                    v.insert(c);
                }
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Terms in graded-lexicographic order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Complex64)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, m: &Monomial) -> Complex64 {
        self.terms.get(m).copied().unwrap_or_default()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Exponent vectors of the monomials with nonzero coefficient.
    pub fn support(&self) -> Vec<Vec<u32>> {
        self.terms.keys().map(|m| m.0.clone()).collect()
    }

    pub fn scale(&self, c: Complex64) -> Polynomial {
        let mut p = Self::zero(self.nvars);
        if c != Complex64::new(0.0, 0.0) {
            for (m, v) in &self.terms {
                p.add_term(v * c, m.clone());
            }
        }
        p
    }

    pub fn derivative(&self, var: usize) -> Polynomial {
        let mut p = Self::zero(self.nvars);
        for (m, c) in &self.terms {
            let e = m.0[var];
            if e > 0 {
                let mut d = m.0.clone();
                d[var] -= 1;
                p.add_term(c * e as f64, Monomial(d));
            }
        }
        p
    }

    /// Direct evaluation, without power caching.
    pub fn eval(&self, x: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(m, c)| {
                m.0.iter()
                    .zip(x)
                    .fold(*c, |acc, (&e, xi)| acc * xi.powu(e))
            })
            .sum()
    }

    fn write_line(&self, out: &mut String) {
        use fmt::Write;
        if self.terms.is_empty() {
            let zeros = vec!["0"; self.nvars].join(",");
            let _ = write!(out, "0.0,0.0:{zeros}");
            return;
        }
        for (k, (m, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                out.push('+');
            }
            let exps: Vec<String> = m.0.iter().map(u32::to_string).collect();
            let _ = write!(out, "{:?},{:?}:{}", c.re, c.im, exps.join(","));
        }
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut p = self.clone();
        for (m, c) in &rhs.terms {
            p.add_term(*c, m.clone());
        }
        p
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let mut p = self.clone();
        for (m, c) in &rhs.terms {
            p.add_term(-*c, m.clone());
        }
        p
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut p = Polynomial::zero(self.nvars);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &rhs.terms {
                p.add_term(c1 * c2, m1.mul(m2));
            }
        }
        p
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(Complex64::new(-1.0, 0.0))
    }
}

/// Flattened term storage used on the hot evaluation path.
#[derive(Clone, Debug)]
struct Compiled {
    /// Term range of each equation.
    eq_start: Vec<usize>,
    coeffs: Vec<Complex64>,
    /// Factor range of each term into `fac_var` / `fac_exp`.
    term_start: Vec<usize>,
    fac_var: Vec<usize>,
    fac_exp: Vec<u32>,
    /// Offset of each variable's power table.
    pow_start: Vec<usize>,
}

impl Compiled {
    fn new(nvars: usize, polys: &[Polynomial]) -> Self {
        let mut max_exp = vec![0u32; nvars];
        let mut eq_start = vec![0];
        let mut coeffs = Vec::new();
        let mut term_start = vec![0];
        let mut fac_var = Vec::new();
        let mut fac_exp = Vec::new();
        for p in polys {
            for (m, c) in p.terms() {
                coeffs.push(*c);
                for (v, &e) in m.0.iter().enumerate() {
                    if e > 0 {
                        fac_var.push(v);
                        fac_exp.push(e);
                        max_exp[v] = max_exp[v].max(e);
                    }
                }
                term_start.push(fac_var.len());
            }
            eq_start.push(coeffs.len());
        }
        let mut pow_start = Vec::with_capacity(nvars + 1);
        let mut off = 0;
        for &e in &max_exp {
            pow_start.push(off);
            off += e as usize + 1;
        }
        pow_start.push(off);
        Compiled {
            eq_start,
            coeffs,
            term_start,
            fac_var,
            fac_exp,
            pow_start,
        }
    }
}

/// Reusable scratch space for [`PolySystem::eval_into`].
#[derive(Clone, Debug, Default)]
pub struct EvalWorkspace {
    powers: Vec<Complex64>,
}

/// A system of polynomials sharing one variable set. Immutable once built.
#[derive(Clone, Debug)]
pub struct PolySystem {
    nvars: usize,
    polys: Vec<Polynomial>,
    compiled: Compiled,
}

impl PolySystem {
    pub fn new(nvars: usize, polys: Vec<Polynomial>) -> Result<Self, PolyError> {
        for (index, p) in polys.iter().enumerate() {
            if p.nvars != nvars {
                return Err(PolyError::VariableCount {
                    index,
                    expected: nvars,
                    got: p.nvars,
                });
            }
        }
        let compiled = Compiled::new(nvars, &polys);
        Ok(PolySystem {
            nvars,
            polys,
            compiled,
        })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.polys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polys.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.polys.len() == self.nvars
    }

    pub fn polys(&self) -> &[Polynomial] {
        &self.polys
    }

    /// Number of terms over all equations; per-term coefficient vectors
    /// passed to [`PolySystem::eval_into`] have this length.
    pub fn num_terms(&self) -> usize {
        self.compiled.coeffs.len()
    }

    /// Coefficients of all terms, equation by equation, each in term order.
    pub fn coefficients(&self) -> &[Complex64] {
        &self.compiled.coeffs
    }

    /// Range of flat term indices belonging to equation `eq`.
    pub fn term_range(&self, eq: usize) -> std::ops::Range<usize> {
        self.compiled.eq_start[eq]..self.compiled.eq_start[eq + 1]
    }

    fn check_dim(&self, x: &[Complex64]) -> Result<(), PolyError> {
        if x.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[Complex64]) -> Result<Vec<Complex64>, PolyError> {
        self.check_dim(x)?;
        let mut f = vec![Complex64::default(); self.len()];
        self.eval_into(x, None, &mut f, None, &mut EvalWorkspace::default());
        Ok(f)
    }

    pub fn jacobian_eval(&self, x: &[Complex64]) -> Result<CMatrix, PolyError> {
        self.check_dim(x)?;
        let mut f = vec![Complex64::default(); self.len()];
        let mut jac = CMatrix::zeros(self.len(), self.nvars);
        self.eval_into(
            x,
            None,
            &mut f,
            Some(jac.data_mut()),
            &mut EvalWorkspace::default(),
        );
        Ok(jac)
    }

    /// Values and (optionally) the row-major Jacobian at `x`.
    ///
    /// `coeffs`, when given, replaces the stored coefficient of every term
    /// (flat order, see [`PolySystem::coefficients`]). Panics if slice
    /// lengths do not match the system.
    pub fn eval_into(
        &self,
        x: &[Complex64],
        coeffs: Option<&[Complex64]>,
        f: &mut [Complex64],
        mut jac: Option<&mut [Complex64]>,
        ws: &mut EvalWorkspace,
    ) {
        let c = &self.compiled;
        let n = self.nvars;
        assert_eq!(x.len(), n);
        assert_eq!(f.len(), self.polys.len());
        let coeffs = coeffs.unwrap_or(&c.coeffs);
        assert_eq!(coeffs.len(), c.coeffs.len());

        let one = Complex64::new(1.0, 0.0);
        ws.powers.clear();
        ws.powers.resize(*c.pow_start.last().unwrap(), one);
        for v in 0..n {
            let (s, e) = (c.pow_start[v], c.pow_start[v + 1]);
            for k in s + 1..e {
                ws.powers[k] = ws.powers[k - 1] * x[v];
            }
        }
        let pw = |v: usize, e: u32| ws.powers[c.pow_start[v] + e as usize];

        if let Some(j) = jac.as_deref_mut() {
            assert_eq!(j.len(), self.polys.len() * n);
            j.fill(Complex64::default());
        }
        for (eq, fv) in f.iter_mut().enumerate() {
            let mut acc = Complex64::default();
            for t in c.eq_start[eq]..c.eq_start[eq + 1] {
                let fs = c.term_start[t];
                let fe = c.term_start[t + 1];
                let coef = coeffs[t];
                let mut val = coef;
                for k in fs..fe {
                    val *= pw(c.fac_var[k], c.fac_exp[k]);
                }
                acc += val;
                if let Some(j) = jac.as_deref_mut() {
                    for k in fs..fe {
                        let v = c.fac_var[k];
                        let e = c.fac_exp[k];
                        let mut d = coef * (e as f64) * pw(v, e - 1);
                        for l in fs..fe {
                            if l != k {
                                d *= pw(c.fac_var[l], c.fac_exp[l]);
                            }
                        }
                        j[eq * n + v] += d;
                    }
                }
            }
            *fv = acc;
        }
    }

    /// Product of the equation degrees (the Bézout number).
    pub fn total_degree(&self) -> BigUint {
        self.polys
            .iter()
            .fold(BigUint::from(1u32), |acc, p| acc * BigUint::from(p.degree()))
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.polys.iter().map(Polynomial::degree).collect()
    }

    pub fn supports(&self) -> Vec<Vec<Vec<u32>>> {
        self.polys.iter().map(Polynomial::support).collect()
    }

    /// One polynomial per line; terms `re,im:e1,...,en` joined by `+`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.polys {
            p.write_line(&mut out);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PolyError> {
        let mut nvars: Option<usize> = None;
        let mut polys = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| PolyError::Parse {
                line: lineno + 1,
                msg,
            };
            let mut terms = Vec::new();
            for tok in split_terms(line) {
                let (coef, exps) = tok
                    .split_once(':')
                    .ok_or_else(|| perr(format!("missing ':' in term {tok:?}")))?;
                let (re, im) = coef
                    .split_once(',')
                    .ok_or_else(|| perr(format!("coefficient {coef:?} is not re,im")))?;
                let re: f64 = re.trim().parse().map_err(|e| perr(format!("{e}")))?;
                let im: f64 = im.trim().parse().map_err(|e| perr(format!("{e}")))?;
                let exps = exps
                    .split(',')
                    .map(|e| e.trim().parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| perr(format!("{e}")))?;
                match nvars {
                    None => nvars = Some(exps.len()),
                    Some(n) if n != exps.len() => {
                        return Err(perr(format!(
                            "term has {} exponents, expected {n}",
                            exps.len()
                        )))
                    }
                    _ => {}
                }
                terms.push((Complex64::new(re, im), exps));
            }
            polys.push(Polynomial::from_terms(nvars.unwrap(), terms)?);
        }
        let nvars = nvars.ok_or(PolyError::Parse {
            line: 0,
            msg: "empty system".into(),
        })?;
        PolySystem::new(nvars, polys)
    }
}

/// Splits on `+` separators, leaving exponent signs like `1e+5` intact.
fn split_terms(line: &str) -> Vec<&str> {
    let bytes = line.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..bytes.len() {
        if bytes[i] == b'+' && i > 0 && !matches!(bytes[i - 1], b'e' | b'E') {
            out.push(&line[start..i]);
            start = i + 1;
        }
    }
    out.push(&line[start..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn sys(nvars: usize, polys: Vec<Vec<(f64, Vec<u32>)>>) -> PolySystem {
        let polys = polys
            .into_iter()
            .map(|t| Polynomial::from_terms(nvars, t.into_iter().map(|(a, e)| (c(a), e))).unwrap())
            .collect();
        PolySystem::new(nvars, polys).unwrap()
    }

    #[test]
    fn eval_simple() {
        let s = sys(2, vec![vec![(1.0, vec![2, 0]), (1.0, vec![0, 1]), (-1.0, vec![0, 0])]]);
        assert_eq!(s.eval(&[c(2.0), c(3.0)]).unwrap(), vec![c(6.0)]);
        let j = s.jacobian_eval(&[c(2.0), c(3.0)]).unwrap();
        assert_eq!((j[(0, 0)], j[(0, 1)]), (c(4.0), c(1.0)));
    }

    #[test]
    fn identity_point() {
        let s = sys(
            2,
            vec![
                vec![(1.0, vec![3, 1]), (-1.0, vec![0, 0])],
                vec![(1.0, vec![1, 2]), (-1.0, vec![0, 0])],
            ],
        );
        let x = [c(1.0), c(1.0)];
        assert_eq!(s.eval(&x).unwrap(), vec![c(0.0), c(0.0)]);
        let j = s.jacobian_eval(&x).unwrap();
        assert_eq!(j[(0, 0)], c(3.0));
        assert_eq!(j[(0, 1)], c(1.0));
        assert_eq!(j[(1, 0)], c(1.0));
        assert_eq!(j[(1, 1)], c(2.0));
    }

    #[test]
    fn dimension_mismatch() {
        let s = sys(2, vec![vec![(1.0, vec![1, 0])]]);
        assert!(matches!(
            s.eval(&[c(1.0)]),
            Err(PolyError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(s.jacobian_eval(&[c(1.0); 3]).is_err());
    }

    #[test]
    fn support_and_degree() {
        let p = Polynomial::from_terms(
            2,
            vec![(c(1.0), vec![2, 0]), (c(1.0), vec![0, 1]), (c(-1.0), vec![0, 0])],
        )
        .unwrap();
        let mut s = p.support();
        s.sort();
        assert_eq!(s, vec![vec![0, 0], vec![0, 1], vec![2, 0]]);
        assert!(Polynomial::zero(3).support().is_empty());
        let t = sys(
            2,
            vec![
                vec![(1.0, vec![2, 0]), (1.0, vec![0, 1]), (-1.0, vec![0, 0])],
                vec![(1.0, vec![1, 1]), (-2.0, vec![0, 0])],
            ],
        );
        assert_eq!(t.total_degree(), BigUint::from(4u32));
    }

    #[test]
    fn cancellation_drops_terms() {
        let x = Polynomial::variable(2, 0);
        let y = Polynomial::variable(2, 1);
        let p = &(&x + &y) - &x;
        assert_eq!(p.num_terms(), 1);
        assert_eq!(p, y);
        let sq = &(&x + &y) * &(&x - &y);
        // x^2 - y^2, the xy terms cancel
        assert_eq!(sq.num_terms(), 2);
    }

    #[test]
    fn grlex_order() {
        let p = Polynomial::from_terms(
            2,
            vec![(c(1.0), vec![0, 2]), (c(1.0), vec![1, 0]), (c(1.0), vec![2, 0]), (c(1.0), vec![0, 0])],
        )
        .unwrap();
        let order: Vec<_> = p.terms().map(|(m, _)| m.exponents().to_vec()).collect();
        assert_eq!(order, vec![vec![0, 0], vec![1, 0], vec![0, 2], vec![2, 0]]);
    }

    #[test]
    fn text_round_trip() {
        let s = sys(
            2,
            vec![
                vec![(1.5e-7, vec![2, 0]), (-3.25, vec![0, 1]), (1e20, vec![0, 0])],
                vec![(1.0, vec![1, 1])],
            ],
        );
        let text = s.to_text();
        assert!(text.lines().count() == 2);
        let back = PolySystem::from_text(&text).unwrap();
        assert_eq!(back.polys(), s.polys());
        let parsed = PolySystem::from_text("1,0:2,0+-1,0:0,0\n2e+1,0:1,1\n").unwrap();
        assert_eq!(parsed.polys()[1].coefficient(&Monomial::new(vec![1, 1])), c(20.0));
        assert!(PolySystem::from_text("1,0:2,0+1,0:1\n").is_err());
    }
}
