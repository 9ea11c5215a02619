//! Cartesian coordinates from mutual distances by double centring and a
//! Jacobi eigendecomposition of the Gram matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acsys::DistanceIndexing;
use crate::linalg::symmetric_eigen;

pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("distance vector has {got} entries, {n} bodies need {expected}")]
    DistanceCount { n: usize, expected: usize, got: usize },
    #[error("dimension {0} out of range")]
    BadDimension(usize),
    #[error("Gram matrix has eigenvalue {value} below zero; distances are not Euclidean")]
    NonEuclidean { value: f64 },
    #[error("Gram eigenvalue {value} beyond dimension {dimension} is not negligible")]
    RankMismatch { dimension: usize, value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub dimension: usize,
    pub coordinates: Vec<Vec<f64>>,
    pub max_distance_error: f64,
}

fn gram(d: &[f64], n: usize) -> Result<Vec<f64>, EmbedError> {
    let idx = DistanceIndexing::new(n);
    if d.len() != idx.len() {
        return Err(EmbedError::DistanceCount {
            n,
            expected: idx.len(),
            got: d.len(),
        });
    }
    let mut b = vec![0.0; n * n];
    for (k, &(i, j)) in idx.pairs().iter().enumerate() {
        b[i * n + j] = -0.5 * d[k] * d[k];
        b[j * n + i] = b[i * n + j];
    }
    let row: Vec<f64> = (0..n).map(|i| b[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let all: f64 = row.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] += all - row[i] - row[j];
        }
    }
    Ok(b)
}

/// Number of Gram eigenvalues above `tol` times the largest.
pub fn spectral_dimension(d: &[f64], n: usize, tol: f64) -> usize {
    let Ok(b) = gram(d, n) else {
        return 0;
    };
    let (vals, _) = symmetric_eigen(&b, n);
    let top = vals[0].max(0.0);
    vals.iter().filter(|&&v| v > tol * top).count()
}

pub fn reconstruct(d: &[f64], n: usize, dimension: usize) -> Result<Embedding, EmbedError> {
    if dimension == 0 || dimension >= n {
        return Err(EmbedError::BadDimension(dimension));
    }
    let b = gram(d, n)?;
    let (vals, vecs) = symmetric_eigen(&b, n);
    let top = vals[0].max(0.0);
    if let Some(&low) = vals.last() {
        if low < -RANK_TOL * top {
            return Err(EmbedError::NonEuclidean { value: low });
        }
    }
    if dimension < n && vals[dimension] > RANK_TOL * top {
        return Err(EmbedError::RankMismatch {
            dimension,
            value: vals[dimension],
        });
    }
    let mut coords: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..dimension)
                .map(|k| vecs[i * n + k] * vals[k].max(0.0).sqrt())
                .collect()
        })
        .collect();
    let scale = d.iter().copied().fold(0.0, f64::max);
    for k in 0..dimension {
        if let Some(p) = coords.iter().find(|p| p[k].abs() > 1e-9 * scale) {
            if p[k] < 0.0 {
                coords.iter_mut().for_each(|p| p[k] = -p[k]);
            }
        }
    }
    let idx = DistanceIndexing::new(n);
    let max_distance_error = idx
        .pairs()
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let r: f64 = coords[i]
                .iter()
                .zip(&coords[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            (r - d[k]).abs()
        })
        .fold(0.0, f64::max);
    Ok(Embedding {
        dimension,
        coordinates: coords,
        max_distance_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilateral_triangle() {
        let e = reconstruct(&[1.0; 3], 3, 2).unwrap();
        assert!(e.max_distance_error < 1e-12);
        for k in 0..2 {
            let c: f64 = e.coordinates.iter().map(|p| p[k]).sum();
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn four_simplex() {
        let e = reconstruct(&[1.0; 10], 5, 4).unwrap();
        assert!(e.max_distance_error < 1e-12);
        assert_eq!(spectral_dimension(&[1.0; 10], 5, RANK_TOL), 4);
    }

    #[test]
    fn rank_checks() {
        // collinear 0, 1, 2
        let d = [1.0, 2.0, 1.0];
        assert_eq!(spectral_dimension(&d, 3, RANK_TOL), 1);
        assert!(reconstruct(&d, 3, 1).unwrap().max_distance_error < 1e-12);
        assert!(matches!(reconstruct(&[1.0; 3], 3, 1), Err(EmbedError::RankMismatch { .. })));
        assert!(matches!(reconstruct(&[1.0, 1.0, 3.0], 3, 2), Err(EmbedError::NonEuclidean { .. })));
    }
}
