//! Householder QR and random rotation matrices.

use super::matrix::{gemm, Matrix};
use super::rng::{gaussian_matrix, Prng};
use crate::error::{Error, Result};

/// Householder QR of a square matrix, returning `(Q, R)` with `A = Q·R`.
///
/// Signs are normalized so that `R` has a non-negative diagonal, which makes
/// the factorization unique for full-rank input.
pub fn householder_qr(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Contract(format!(
            "householder_qr expects a square matrix, got {:?}",
            a.shape()
        )));
    }
    let mut r = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);

    for k in 0..n {
        let norm = (k..n).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        let mut v: Vec<f64> = (k..n).map(|i| r[(i, k)]).collect();
        if norm == 0.0 {
            reflectors.push(vec![0.0; n - k]);
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            v.iter_mut().for_each(|x| *x /= vnorm);
        }
        // R[k.., k..] -= 2 v (vᵀ R[k.., k..])
        for j in k..n {
            let dot: f64 = (k..n).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..n {
                r[(i, j)] -= 2.0 * v[i - k] * dot;
            }
        }
        reflectors.push(v);
    }

    // Q = H_0 H_1 … H_{n-1}, accumulated right to left onto the identity.
    let mut q = Matrix::identity(n);
    for k in (0..n).rev() {
        let v = &reflectors[k];
        for j in 0..n {
            let dot: f64 = (k..n).map(|i| v[i - k] * q[(i, j)]).sum();
            if dot == 0.0 {
                continue;
            }
            for i in k..n {
                q[(i, j)] -= 2.0 * v[i - k] * dot;
            }
        }
    }

    for k in 0..n {
        if r[(k, k)] < 0.0 {
            for j in 0..n {
                r[(k, j)] = -r[(k, j)];
                q[(j, k)] = -q[(j, k)];
            }
        }
        for i in (k + 1)..n {
            r[(i, k)] = 0.0;
        }
    }
    Ok((q, r))
}

/// Orthogonal `P×P` matrix used to correlate the simulated processes.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix(Matrix);

impl RotationMatrix {
    /// Wraps an existing matrix after checking orthogonality to 1e-10.
    pub fn new(q: Matrix) -> Result<Self> {
        if q.rows() != q.cols() {
            return Err(Error::Contract("rotation must be square".into()));
        }
        let qtq = gemm(&q, true, &q, false)?;
        let dev = qtq.max_abs_diff(&Matrix::identity(q.rows()));
        if dev >= 1e-10 {
            return Err(Error::Contract(format!(
                "matrix is not orthogonal (max |QᵀQ - I| = {dev:e})"
            )));
        }
        Ok(Self(q))
    }

    pub fn identity(p: usize) -> Self {
        Self(Matrix::identity(p))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// `Q · x`
    pub fn rotate(&self, x: &Matrix) -> Result<Matrix> {
        gemm(&self.0, false, x, false)
    }

    /// `Qᵀ · y`, the inverse rotation.
    pub fn unrotate(&self, y: &Matrix) -> Result<Matrix> {
        gemm(&self.0, true, y, false)
    }
}

/// Q factor of a Householder QR of a `p×p` standard normal matrix.
pub fn qr_rotation(prng: &mut Prng, p: usize) -> Result<RotationMatrix> {
    if p == 0 {
        return Err(Error::Contract("rotation dimension must be >= 1".into()));
    }
    let a = gaussian_matrix(prng, p, p);
    let (q, _) = householder_qr(&a)?;
    Ok(RotationMatrix(q))
}
