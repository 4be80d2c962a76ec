//! Small dense symmetric linear algebra.
//!
//! Everything here works on matrices of size at most a dozen or so: ambient
//! Hessians live in dimension `n + m <= 7` and the area Hessian tensor in
//! dimension `n * m <= 12`. Eigenvalues come from cyclic Jacobi rotations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm (relative to the full norm) at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;

/// A real symmetric matrix. Symmetry is enforced on construction by averaging
/// the matrix with its transpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Shape(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let t = m.transpose();
        Ok(Self((m + t) * 0.5))
    }

    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    pub fn zeros(k: usize) -> Self {
        Self(DMatrix::zeros(k, k))
    }

    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(&self.0 * s)
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Conjugation `Qᵀ S Q` for any (not necessarily square) `Q`.
    pub fn congruence(&self, q: &DMatrix<f64>) -> Self {
        Self::new(q.transpose() * &self.0 * q).expect("congruence of a square matrix is square")
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        jacobi_eigen(&self.0).values
    }

    pub fn eigen(&self) -> SymEigen {
        jacobi_eigen(&self.0)
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending and the
/// matching unit eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Cyclic Jacobi eigenvalue iteration.
///
/// Sweeps over all `(p, q)` pairs until the off-diagonal Frobenius norm drops
/// below `JACOBI_TOL` times the norm of the input. The input is assumed
/// symmetric; only its upper triangle is trusted.
pub fn jacobi_eigen(input: &DMatrix<f64>) -> SymEigen {
    let k = input.nrows();
    let mut a = DMatrix::from_fn(k, k, |i, j| if i <= j { input[(i, j)] } else { input[(j, i)] });
    let mut v = DMatrix::<f64>::identity(k, k);
    let scale = a.norm();

    if scale > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut off = 0.0;
            for p in 0..k {
                for q in (p + 1)..k {
                    off += 2.0 * a[(p, q)] * a[(p, q)];
                }
            }
            if off.sqrt() <= JACOBI_TOL * scale {
                break;
            }
            for p in 0..k {
                for q in (p + 1)..k {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    rotate(&mut a, &mut v, p, q, c, s);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(k, k, |r, c| v[(r, order[c])]);
    SymEigen { values, vectors }
}

// Applies the plane rotation J(p, q, c, s): A <- Jᵀ A J, V <- V J.
fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let k = a.nrows();
    for r in 0..k {
        let arp = a[(r, p)];
        let arq = a[(r, q)];
        a[(r, p)] = c * arp - s * arq;
        a[(r, q)] = s * arp + c * arq;
    }
    for r in 0..k {
        let apr = a[(p, r)];
        let aqr = a[(q, r)];
        a[(p, r)] = c * apr - s * aqr;
        a[(q, r)] = s * apr + c * aqr;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..k {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = c * vrp - s * vrq;
        v[(r, q)] = s * vrp + c * vrq;
    }
}

/// Orthonormal basis of the hyperplane `v^⊥` as the columns of a `k x (k-1)`
/// matrix.
///
/// Uses the Householder reflection that sends `v/|v|` to `∓e₁` and keeps the
/// remaining columns. `v` must be nonzero.
pub fn orthogonal_complement(v: &DVector<f64>) -> DMatrix<f64> {
    let k = v.len();
    let unit = v / v.norm();
    let sign = if unit[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = unit;
    w[0] += sign;
    let ww = w.dot(&w);
    let reflector = DMatrix::<f64>::identity(k, k) - (&w * w.transpose()) * (2.0 / ww);
    reflector.columns(1, k - 1).into_owned()
}

/// Determinant and inverse of a small SPD matrix via Cholesky.
pub(crate) fn spd_det_inverse(m: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
    let chol = m.clone().cholesky()?;
    let l = chol.l();
    let det = l.diagonal().iter().map(|d| d * d).product();
    Some((det, chol.inverse()))
}
