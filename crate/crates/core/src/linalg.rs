//! Small dense linear-algebra kernels shared by the solvers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Inner product with four independent accumulators; the summation order is
/// fixed so results are reproducible bit for bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix
/// stored row-major as `n*n` values.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `a`. A pivot below `rel_tol * max|a_ii|` is reported as
    /// [`Error::RankDeficient`].
    pub fn new(a: &[f64], n: usize, rel_tol: f64) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
        let tol = rel_tol * scale.max(f64::MIN_POSITIVE);
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= tol {
                return Err(Error::RankDeficient {
                    pivot: d,
                    tolerance: tol,
                });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// The factor `L` (row-major, zeros above the diagonal).
    pub fn lower(&self) -> &[f64] {
        &self.l
    }

    /// `L z`, i.e. a draw from `N(0, A)` when `z` is standard normal.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| (0..=i).map(|k| self.l[i * n + k] * z[k]).sum())
            .collect()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }
}

/// Smallest eigenvalue of a symmetric matrix (row-major `n*n`).
pub fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let m = DMatrix::from_row_slice(n, n, a);
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Gram matrix `(1/n) X_Aᵀ X_B` for column lists, row-major `|A|×|B|`.
pub fn gram(a: &[&[f64]], b: &[&[f64]], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len() * b.len()];
    for (i, ca) in a.iter().enumerate() {
        for (j, cb) in b.iter().enumerate() {
            out[i * b.len() + j] = dot(ca, cb) / n as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..11).map(|i| (i * i) as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let ch = Cholesky::new(&a, 3, 1e-12).unwrap();
        let x = ch.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rank_deficient() {
        let a = [1.0, 1.0, 1.0, 1.0];
        assert!(matches!(
            Cholesky::new(&a, 2, 1e-10),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn min_eigenvalue_of_diagonal() {
        assert!((min_eigenvalue(&[3.0, 0.0, 0.0, 0.25], 2) - 0.25).abs() < 1e-14);
    }
}
