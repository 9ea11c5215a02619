//! Small dense matrices and LU factorisation over `f64` and `Complex64`.
//!
//! Everything here is sized for the systems this crate handles (at most a few
//! dozen unknowns), so plain row-major storage and partial pivoting suffice.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;

pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn modulus(self) -> f64;
    fn from_f64(x: f64) -> Self;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Scalar for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn from_f64(x: f64) -> Self {
        x
    }
}

impl Scalar for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type CMatrix = Matrix<Complex64>;
pub type RMatrix = Matrix<f64>;

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.modulus()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    pub fn mul_mat(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorisation with partial pivoting of a square matrix.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    piv: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    pub fn new(n: usize) -> Self {
        Lu {
            n,
            lu: vec![T::zero(); n * n],
            piv: (0..n).collect(),
        }
    }

    /// Factors a row-major `n×n` matrix. Returns `None` for an exactly
    /// singular (or non-finite) matrix.
    pub fn factor(a: &[T], n: usize) -> Option<Self> {
        let mut lu = Self::new(n);
        lu.refactor(a).then_some(lu)
    }

    /// Reuses this workspace for a new matrix of the same size.
    pub fn refactor(&mut self, a: &[T]) -> bool {
        let n = self.n;
        assert_eq!(a.len(), n * n);
        self.lu.copy_from_slice(a);
        let lu = &mut self.lu;
        for (i, p) in self.piv.iter_mut().enumerate() {
            *p = i;
        }
        for k in 0..n {
            let mut best = k;
            let mut best_mod = lu[k * n + k].modulus();
            for i in k + 1..n {
                let m = lu[i * n + k].modulus();
                if m > best_mod {
                    best = i;
                    best_mod = m;
                }
            }
            if best_mod == 0.0 || !best_mod.is_finite() {
                return false;
            }
            if best != k {
                for j in 0..n {
                    lu.swap(k * n + j, best * n + j);
                }
                self.piv.swap(k, best);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        let u = lu[k * n + j];
                        lu[i * n + j] -= f * u;
                    }
                }
            }
        }
        true
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut tmp: Vec<T> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = tmp[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * tmp[j];
            }
            tmp[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = tmp[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * tmp[j];
            }
            tmp[i] = s / self.lu[i * n + i];
        }
        b.copy_from_slice(&tmp);
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.n;
        let mut inv = Matrix::zeros(n, n);
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            col.fill(T::zero());
            col[j] = T::one();
            self.solve(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }

    pub fn determinant(&self) -> T {
        let n = self.n;
        let mut det = T::one();
        for k in 0..n {
            det *= self.lu[k * n + k];
        }
        let mut perm = self.piv.clone();
        let mut sign = false;
        for i in 0..n {
            while perm[i] != i {
                let j = perm[i];
                perm.swap(i, j);
                sign = !sign;
            }
        }
        if sign {
            -det
        } else {
            det
        }
    }
}

/// `‖A‖∞ ‖A⁻¹‖∞`, infinite for a singular matrix.
pub fn condition_inf<T: Scalar>(a: &Matrix<T>) -> f64 {
    assert_eq!(a.rows(), a.cols());
    match Lu::factor(a.data(), a.rows()) {
        Some(lu) => a.norm_inf() * lu.inverse().norm_inf(),
        None => f64::INFINITY,
    }
}

/// Eigenvalues (descending) and column eigenvectors of a symmetric matrix by
/// cyclic Jacobi rotations.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-32 * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (col, &i) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + col] = v[k * n + i];
        }
    }
    (values, vecs)
}

/// Ratio of extreme singular values, from the eigenvalues of `AᵀA`.
pub fn condition_2(a: &RMatrix) -> f64 {
    let n = a.cols();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] = (0..a.rows()).map(|k| a[(k, i)] * a[(k, j)]).sum();
        }
    }
    let (vals, _) = symmetric_eigen(&g, n);
    let lo = vals[n - 1];
    if !(lo > 0.0) {
        return f64::INFINITY;
    }
    (vals[0] / lo).sqrt()
}

pub fn norm_inf<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.modulus()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalises() {
        let a = [4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 1.0];
        let (vals, vecs) = symmetric_eigen(&a, 3);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for c in 0..3 {
            for r in 0..3 {
                let av: f64 = (0..3).map(|k| a[r * 3 + k] * vecs[k * 3 + c]).sum();
                assert!((av - vals[c] * vecs[r * 3 + c]).abs() < 1e-12);
            }
        }
        let trace: f64 = vals.iter().sum();
        assert!((trace - 8.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_condition() {
        let a = RMatrix::from_row_major(2, 2, vec![3.0, 0.0, 0.0, -0.5]);
        assert!((condition_2(&a) - 6.0).abs() < 1e-12);
        // [[1, 1], [0, 1]]: singular values are the golden ratio and its inverse
        let b = RMatrix::from_row_major(2, 2, vec![1.0, 1.0, 0.0, 1.0]);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((condition_2(&b) - phi * phi).abs() < 1e-10);
    }


    #[test]
    fn solve_real() {
        let a = [2.0, 1.0, 1.0, 3.0];
        let lu = Lu::factor(&a, 2).unwrap();
        let mut b = [3.0, 5.0];
        lu.solve(&mut b);
        assert!((b[0] - 0.8).abs() < 1e-15 && (b[1] - 1.4).abs() < 1e-15);
        assert!((lu.determinant() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_none() {
        assert!(Lu::factor(&[1.0, 2.0, 2.0, 4.0], 2).is_none());
        assert!(condition_inf(&RMatrix::from_row_major(2, 2, vec![0.0; 4])).is_infinite());
    }

    #[test]
    fn complex_inverse() {
        let i = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        let a = CMatrix::from_row_major(2, 2, vec![one, i, -i, 2.0 * one]);
        let inv = Lu::factor(a.data(), 2).unwrap().inverse();
        let prod = a.mul_mat(&inv);
        for r in 0..2 {
            for c in 0..2 {
                let e = if r == c { one } else { Complex64::default() };
                assert!((prod[(r, c)] - e).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn determinant_sign_with_pivoting() {
        let a = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(Lu::factor(&a, 2).unwrap().determinant(), -1.0);
        let b = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(Lu::factor(&b, 3).unwrap().determinant(), 1.0);
    }
}
