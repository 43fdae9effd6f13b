//! Small symmetric matrices.
//!
//! Cell tensors are stored in a fixed 3×3 layout regardless of the dimension;
//! only the leading `d×d` block is meaningful. Effective matrices, which need
//! eigenvalues and inverses, are plain `nalgebra::DMatrix` values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymTensor(pub [[f64; 3]; 3]);

impl SymTensor {
    pub const ZERO: SymTensor = SymTensor([[0.0; 3]; 3]);

    pub fn scalar(dim: usize, c: f64) -> Self {
        let mut t = Self::ZERO;
        for i in 0..dim {
            t.0[i][i] = c;
        }
        t
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut t = Self::ZERO;
        for (i, &v) in diag.iter().enumerate() {
            t.0[i][i] = v;
        }
        t
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut t = Self::ZERO;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                t.0[i][j] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        t
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn to_matrix(&self, dim: usize) -> DMatrix<f64> {
        DMatrix::from_fn(dim, dim, |i, j| self.0[i][j])
    }

    /// Upper-triangular entries, row by row: `a11, a12, .., a1d, a22, ..`.
    pub fn upper_triangle(&self, dim: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                out.push(self.0[i][j]);
            }
        }
        out
    }

    pub fn from_upper_triangle(dim: usize, entries: &[f64]) -> Self {
        let mut t = Self::ZERO;
        let mut k = 0;
        for i in 0..dim {
            for j in i..dim {
                t.0[i][j] = entries[k];
                t.0[j][i] = entries[k];
                k += 1;
            }
        }
        t
    }

    pub fn apply(&self, dim: usize, v: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..dim {
            for j in 0..dim {
                out[i] += self.0[i][j] * v[j];
            }
        }
        out
    }

    pub fn is_symmetric(&self, dim: usize) -> bool {
        (0..dim).all(|i| (0..dim).all(|j| self.0[i][j] == self.0[j][i]))
    }

    /// Smallest and largest eigenvalue of the leading block.
    pub fn eigen_range(&self, dim: usize) -> (f64, f64) {
        if self.is_scalar(dim) {
            return (self.0[0][0], self.0[0][0]);
        }
        eigen_range(&self.to_matrix(dim))
    }

    pub fn is_scalar(&self, dim: usize) -> bool {
        let c = self.0[0][0];
        (0..dim).all(|i| (0..dim).all(|j| self.0[i][j] == if i == j { c } else { 0.0 }))
    }

    pub fn inverse(&self, dim: usize) -> Option<Self> {
        if self.is_scalar(dim) {
            return (self.0[0][0] != 0.0).then(|| Self::scalar(dim, 1.0 / self.0[0][0]));
        }
        self.to_matrix(dim).try_inverse().map(|m| Self::from_matrix(&m))
    }
}

pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = 0.5 * (m + m.transpose());
    let eig = sym.symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    eigen_range(m).1
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    eigen_range(m).0
}

/// `a ⪯ b + tol·Id` in the positive-semidefinite order.
pub fn psd_leq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    lambda_min(&(b - a)) >= -tol
}

/// Largest absolute eigenvalue (spectral norm of a symmetric matrix).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eigen_range(m);
    lo.abs().max(hi.abs())
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}
