//! Spectral radius of nonnegative sparse matrices.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub radius: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Nonnegative approximate Perron vector, normalized to unit 1-norm.
    pub vector: Vec<f64>,
}

/// Power iteration on a nonnegative matrix.
///
/// Runs the plain iteration first; if it fails to settle (periodic or
/// defective spectra), falls back to the shifted matrix `A + I`, whose
/// Perron root is `rho(A) + 1`.
pub fn spectral_radius(a: &CsrMatrix, rel_tol: f64, max_iter: usize) -> SpectralEstimate {
    let n = a.nrows();
    if n == 0 || a.nnz() == 0 {
        return SpectralEstimate {
            radius: 0.0,
            iterations: 0,
            converged: true,
            vector: vec![0.0; n],
        };
    }
    let plain = power(a, 0.0, rel_tol, max_iter);
    if plain.converged {
        return plain;
    }
    let mut shifted = power(a, 1.0, rel_tol, max_iter);
    shifted.radius = (shifted.radius - 1.0).max(0.0);
    shifted.iterations += plain.iterations;
    shifted
}

fn power(a: &CsrMatrix, shift: f64, rel_tol: f64, max_iter: usize) -> SpectralEstimate {
    let n = a.nrows();
    let mut x = vec![1.0 / n as f64; n];
    let mut lambda = 0.0;
    let mut prev = f64::NAN;
    for it in 1..=max_iter {
        let mut y = a.mul_vec(&x);
        if shift != 0.0 {
            for (yi, xi) in y.iter_mut().zip(&x) {
                *yi += shift * xi;
            }
        }
        let norm: f64 = y.iter().sum();
        if norm == 0.0 {
            // nilpotent on this start vector
            return SpectralEstimate {
                radius: 0.0,
                iterations: it,
                converged: true,
                vector: x,
            };
        }
        lambda = norm;
        for v in &mut y {
            *v /= norm;
        }
        let change: f64 = y.iter().zip(&x).map(|(p, q)| (p - q).abs()).sum();
        x = y;
        if (lambda - prev).abs() <= rel_tol * lambda.abs().max(f64::MIN_POSITIVE)
            && change <= 1e3 * rel_tol
        {
            return SpectralEstimate {
                radius: lambda,
                iterations: it,
                converged: true,
                vector: x,
            };
        }
        prev = lambda;
    }
    SpectralEstimate {
        radius: lambda,
        iterations: max_iter,
        converged: false,
        vector: x,
    }
}

/// Indices reachable from `sources` along the nonzero pattern of `a`
/// (an entry `a[i][j]` links `i` to `j`), ascending.
pub fn reachable_from(a: &CsrMatrix, sources: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for s in sources {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &j in a.row_indices(i) {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    (0..n).filter(|&i| seen[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_closed_loop() {
        let p = CsrMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.0]]);
        let est = spectral_radius(&p, 1e-12, 10_000);
        let golden = (1.0 + 5f64.sqrt()) / 4.0;
        assert!(est.converged);
        assert!((est.radius - golden).abs() < 1e-9, "{}", est.radius);
    }

    #[test]
    fn nilpotent_and_zero() {
        let z = CsrMatrix::zeros(3, 3);
        assert_eq!(spectral_radius(&z, 1e-10, 100).radius, 0.0);
        let nil = CsrMatrix::from_dense(&[vec![0.0, 0.5], vec![0.0, 0.0]]);
        assert!(spectral_radius(&nil, 1e-10, 10_000).radius < 1e-3);
    }

    #[test]
    fn periodic_matrix_uses_shift() {
        let swap = CsrMatrix::from_dense(&[vec![0.0, 0.9], vec![0.9, 0.0]]);
        let est = spectral_radius(&swap, 1e-10, 10_000);
        assert!((est.radius - 0.9).abs() < 1e-8, "{}", est.radius);
    }

    #[test]
    fn reachability() {
        let p = CsrMatrix::from_dense(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ]);
        assert_eq!(reachable_from(&p, [0]), vec![0, 1]);
        assert_eq!(reachable_from(&p, [2]), vec![0, 1, 2]);
    }
}
