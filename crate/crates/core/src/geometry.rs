//! Area functional of graphs `x ↦ (x, u(x))` in `ℝ^{n+m}` and the pointwise
//! calculus built on it: the integrand `F(A) = det(I + AᵀA)^{1/2}`, its
//! gradient and Hessian, Pucci extremal operators, cones around the
//! `x`-subspace and the minimal tangential Laplacian of an ambient field.
//!
//! Gradients are `n x m` matrices with entry `(i, α) = ∂ᵢ u^α`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{jacobi_eigen, orthogonal_complement, spd_det_inverse, SymMatrix};

pub const MAX_N: usize = 4;
pub const MAX_M: usize = 3;

/// Domain dimension `n` and codimension `m` of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
}

impl Dims {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if !(2..=MAX_N).contains(&n) || !(1..=MAX_M).contains(&m) {
            return Err(Error::InvalidDims { n, m });
        }
        Ok(Self { n, m })
    }

    pub fn ambient(&self) -> usize {
        self.n + self.m
    }
}

/// The matrix `Du` (or the slope `A` of an affine map), `n x m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient(DMatrix<f64>);

impl Gradient {
    pub fn new(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self(DMatrix::zeros(n, m))
    }

    /// Builds from entries listed row by row, i.e. `(i, α)` at `i * m + α`.
    pub fn from_row_slice(n: usize, m: usize, entries: &[f64]) -> Self {
        Self(DMatrix::from_row_slice(n, m, entries))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn m(&self) -> usize {
        self.0.ncols()
    }

    pub fn entry(&self, i: usize, alpha: usize) -> f64 {
        self.0[(i, alpha)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub(crate) fn to_small(&self) -> SmallGrad {
        let mut du = [[0.0; MAX_M]; MAX_N];
        for i in 0..self.n() {
            for a in 0..self.m() {
                du[i][a] = self.0[(i, a)];
            }
        }
        du
    }
}

/// A point `X = (x, z)` of `ℝ^{n+m}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbientPoint {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl AmbientPoint {
    pub fn new(x: Vec<f64>, z: Vec<f64>) -> Self {
        Self { x, z }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.x.len() + self.z.len(), self.x.iter().chain(&self.z).copied())
    }

    pub fn from_vector(n: usize, v: &DVector<f64>) -> Self {
        Self {
            x: v.rows(0, n).iter().copied().collect(),
            z: v.rows(n, v.len() - n).iter().copied().collect(),
        }
    }
}

/// The cone `C_γ = {(x, z) : |z| <= tan γ |x|}` around the `x`-subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    gamma: f64,
}

impl Cone {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&gamma) {
            return Err(invalid("gamma", format!("{gamma} not in [0, pi/2)")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Boundary inclusive; `tan` is evaluated with a few ulps of slack so
    /// that `γ = π/4, |z| = |x|` lands inside.
    pub fn contains(&self, p: &AmbientPoint) -> bool {
        let xn = p.x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let zn = p.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        zn <= self.gamma.tan() * xn * (1.0 + 8.0 * f64::EPSILON)
    }
}

/// `F(A) = det(I_m + AᵀA)^{1/2}`.
pub fn area_integrand(a: &Gradient) -> f64 {
    let m = a.m();
    let gram = DMatrix::<f64>::identity(m, m) + a.0.transpose() * &a.0;
    gram.determinant().sqrt()
}

/// Both Gram determinants `(det(I_m + AᵀA), det(I_n + AAᵀ))`; equal by
/// Sylvester's identity.
pub fn gram_determinants(a: &Gradient) -> (f64, f64) {
    let (n, m) = (a.n(), a.m());
    let small = DMatrix::<f64>::identity(m, m) + a.0.transpose() * &a.0;
    let large = DMatrix::<f64>::identity(n, n) + &a.0 * a.0.transpose();
    (small.determinant(), large.determinant())
}

/// `DF(A) = F(A) (I_n + AAᵀ)⁻¹ A`.
pub fn area_gradient(a: &Gradient) -> Gradient {
    let n = a.n();
    let big = DMatrix::<f64>::identity(n, n) + &a.0 * a.0.transpose();
    let (_, inv) = spd_det_inverse(&big).expect("I + AAᵀ is positive definite");
    Gradient(inv * &a.0 * area_integrand(a))
}

/// The 4-index tensor `F_{αi,βj}` stored as an `nm x nm` matrix whose row and
/// column `α n + i` carry the pair `(α, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaHessian {
    n: usize,
    m: usize,
    data: DMatrix<f64>,
}

impl AreaHessian {
    pub fn get(&self, alpha: usize, i: usize, beta: usize, j: usize) -> f64 {
        self.data[(alpha * self.n + i, beta * self.n + j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.data - self.data.transpose()).amax()
    }

    /// `F_{αi,βj} S^β_{ij}` for per-component matrices `S^β` (n x n).
    pub fn contract(&self, second: &[DMatrix<f64>]) -> Vec<f64> {
        (0..self.m)
            .map(|alpha| {
                let mut acc = 0.0;
                for (beta, s) in second.iter().enumerate() {
                    for i in 0..self.n {
                        for j in 0..self.n {
                            acc += self.get(alpha, i, beta, j) * s[(i, j)];
                        }
                    }
                }
                acc
            })
            .collect()
    }
}

/// Second derivatives of `F` by one level of Richardson extrapolation on
/// central differences of [`area_gradient`], step `1e-4 max(1, |A|)`.
pub fn area_hessian(a: &Gradient) -> AreaHessian {
    let (n, m) = (a.n(), a.m());
    let step = 1e-4 * a.norm().max(1.0);
    let mut data = DMatrix::zeros(n * m, n * m);
    let central = |beta: usize, j: usize, s: f64| {
        let mut plus = a.0.clone();
        let mut minus = a.0.clone();
        plus[(j, beta)] += s;
        minus[(j, beta)] -= s;
        (area_gradient(&Gradient(plus)).0 - area_gradient(&Gradient(minus)).0) / (2.0 * s)
    };
    for beta in 0..m {
        for j in 0..n {
            let coarse = central(beta, j, step);
            let fine = central(beta, j, 0.5 * step);
            let extrapolated = (fine * 4.0 - coarse) / 3.0;
            for alpha in 0..m {
                for i in 0..n {
                    data[(alpha * n + i, beta * n + j)] = extrapolated[(i, alpha)];
                }
            }
        }
    }
    AreaHessian { n, m, data }
}

/// Closed form `F_{αi,βj} = F (g_{αβ} k_{ij} + P_{iα}P_{jβ} − P_{iβ}P_{jα})`
/// with `g = (I + AᵀA)⁻¹`, `k = (I + AAᵀ)⁻¹` and `P = A g`.
pub fn area_hessian_exact(a: &Gradient) -> AreaHessian {
    let (n, m) = (a.n(), a.m());
    let c = SystemCoefficients::new(&a.to_small(), n, m);
    let mut data = DMatrix::zeros(n * m, n * m);
    for alpha in 0..m {
        for i in 0..n {
            for beta in 0..m {
                for j in 0..n {
                    data[(alpha * n + i, beta * n + j)] = c.area
                        * (c.g[alpha][beta] * c.k[i][j] + c.p[i][alpha] * c.p[j][beta]
                            - c.p[i][beta] * c.p[j][alpha]);
                }
            }
        }
    }
    AreaHessian { n, m, data }
}

pub(crate) type SmallGrad = [[f64; MAX_M]; MAX_N];

/// Pointwise coefficients of the minimal surface system at a slope `A`.
///
/// Against a symmetric second derivative the antisymmetric `PP` part of the
/// Hessian tensor cancels, leaving `F g_{αβ} k_{ij} u^β_{ij}`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SystemCoefficients {
    pub area: f64,
    pub g: [[f64; MAX_M]; MAX_M],
    pub k: [[f64; MAX_N]; MAX_N],
    pub p: [[f64; MAX_M]; MAX_N],
}

impl SystemCoefficients {
    pub fn new(du: &SmallGrad, n: usize, m: usize) -> Self {
        let mut gram = [[0.0; MAX_M]; MAX_M];
        for a in 0..m {
            for b in a..m {
                let mut s = if a == b { 1.0 } else { 0.0 };
                for row in du.iter().take(n) {
                    s += row[a] * row[b];
                }
                gram[a][b] = s;
                gram[b][a] = s;
            }
        }
        let (det, g) = small_spd_inverse(&gram, m);
        let mut p = [[0.0; MAX_M]; MAX_N];
        for i in 0..n {
            for a in 0..m {
                let mut s = 0.0;
                for b in 0..m {
                    s += du[i][b] * g[b][a];
                }
                p[i][a] = s;
            }
        }
        let mut k = [[0.0; MAX_N]; MAX_N];
        for i in 0..n {
            for j in i..n {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for a in 0..m {
                    s -= p[i][a] * du[j][a];
                }
                k[i][j] = s;
                k[j][i] = s;
            }
        }
        Self {
            area: det.sqrt(),
            g,
            k,
            p,
        }
    }

    /// `F g_{αβ} k_{ij} S^β_{ij}` for the second derivatives `d2[β][i][j]`.
    pub fn apply(&self, d2: &[[[f64; MAX_N]; MAX_N]; MAX_M], n: usize, m: usize, out: &mut [f64]) {
        let mut traced = [0.0; MAX_M];
        for (beta, t) in traced.iter_mut().enumerate().take(m) {
            let mut s = 0.0;
            for i in 0..n {
                s += self.k[i][i] * d2[beta][i][i];
                for j in (i + 1)..n {
                    s += 2.0 * self.k[i][j] * d2[beta][i][j];
                }
            }
            *t = s;
        }
        for (alpha, o) in out.iter_mut().enumerate().take(m) {
            let mut s = 0.0;
            for beta in 0..m {
                s += self.g[alpha][beta] * traced[beta];
            }
            *o = self.area * s;
        }
    }

    /// `DF(A)_{iα} = F P_{iα}`.
    pub fn flux(&self, i: usize, alpha: usize) -> f64 {
        self.area * self.p[i][alpha]
    }
}

/// Largest eigenvalue of the symmetric part of the coefficient tensor,
/// `F λmax(g) λmax(k)`.
pub(crate) fn ellipticity_upper(du: &SmallGrad, n: usize, m: usize) -> f64 {
    let c = SystemCoefficients::new(du, n, m);
    // The smaller Gram matrix carries all nonzero singular values of A.
    let r = n.min(m);
    let gram = DMatrix::from_fn(r, r, |a, b| {
        let mut s = 0.0;
        if n >= m {
            for row in du.iter().take(n) {
                s += row[a] * row[b];
            }
        } else {
            for al in 0..m {
                s += du[a][al] * du[b][al];
            }
        }
        s
    });
    let smin = jacobi_eigen(&gram).values[0].max(0.0);
    let lg = if m > n { 1.0 } else { 1.0 / (1.0 + smin) };
    let lk = if n > m { 1.0 } else { 1.0 / (1.0 + smin) };
    c.area * lg * lk
}

fn small_spd_inverse(a: &[[f64; MAX_M]; MAX_M], m: usize) -> (f64, [[f64; MAX_M]; MAX_M]) {
    let mut inv = [[0.0; MAX_M]; MAX_M];
    match m {
        1 => {
            inv[0][0] = 1.0 / a[0][0];
            (a[0][0], inv)
        }
        2 => {
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            inv[0][0] = a[1][1] / det;
            inv[1][1] = a[0][0] / det;
            inv[0][1] = -a[0][1] / det;
            inv[1][0] = -a[1][0] / det;
            (det, inv)
        }
        3 => {
            let c00 = a[1][1] * a[2][2] - a[1][2] * a[2][1];
            let c01 = a[1][2] * a[2][0] - a[1][0] * a[2][2];
            let c02 = a[1][0] * a[2][1] - a[1][1] * a[2][0];
            let det = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02;
            let c11 = a[0][0] * a[2][2] - a[0][2] * a[2][0];
            let c12 = a[0][1] * a[2][0] - a[0][0] * a[2][1];
            let c22 = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            // Symmetric input: the adjugate is symmetric too.
            inv[0][0] = c00 / det;
            inv[0][1] = c01 / det;
            inv[1][0] = c01 / det;
            inv[0][2] = c02 / det;
            inv[2][0] = c02 / det;
            inv[1][1] = c11 / det;
            inv[1][2] = c12 / det;
            inv[2][1] = c12 / det;
            inv[2][2] = c22 / det;
            (det, inv)
        }
        _ => unreachable!("codimension is at most 3"),
    }
}

/// Maximal Pucci operator `M⁺_{λ,Λ}(N) = Λ Σ(positive eigenvalues) − λ Σ|negative eigenvalues|`.
pub fn pucci_plus(nmat: &SymMatrix, lambda: f64, big_lambda: f64) -> Result<f64> {
    check_ellipticity(lambda, big_lambda)?;
    Ok(nmat
        .eigenvalues()
        .into_iter()
        .map(|e| if e > 0.0 { big_lambda * e } else { lambda * e })
        .sum())
}

/// Minimal Pucci operator `M⁻_{λ,Λ}(N) = λ Σ(positive eigenvalues) − Λ Σ|negative eigenvalues|`.
pub fn pucci_minus(nmat: &SymMatrix, lambda: f64, big_lambda: f64) -> Result<f64> {
    check_ellipticity(lambda, big_lambda)?;
    Ok(nmat
        .eigenvalues()
        .into_iter()
        .map(|e| if e > 0.0 { lambda * e } else { big_lambda * e })
        .sum())
}

fn check_ellipticity(lambda: f64, big_lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !(lambda <= big_lambda) || !big_lambda.is_finite() {
        return Err(invalid(
            "lambda",
            format!("need 0 < lambda <= Lambda, got lambda={lambda}, Lambda={big_lambda}"),
        ));
    }
    Ok(())
}

/// Gradient norm below which the level surface normal is considered undefined.
pub fn grad_tol(hess: &SymMatrix) -> f64 {
    1e-8 * (1.0 + hess.frobenius_norm())
}

/// Minimum over `n`-dimensional subspaces `L ⊥ grad` of `tr(D²H|_L)`.
///
/// Equals the sum of the `n` smallest eigenvalues of the Hessian restricted
/// to the hyperplane `grad^⊥` (Ky Fan). A strictly positive value is exactly
/// the comparison-function condition at the point.
pub fn min_tangential_laplacian(hess: &SymMatrix, grad: &DVector<f64>, n: usize) -> Result<f64> {
    Ok(tangential_minimizer(hess, grad, n)?.0)
}

/// Like [`min_tangential_laplacian`] but also returns a minimizing
/// orthonormal `n`-frame (columns of a `(n+m) x n` matrix).
pub fn tangential_minimizer(hess: &SymMatrix, grad: &DVector<f64>, n: usize) -> Result<(f64, DMatrix<f64>)> {
    let k = hess.dim();
    if grad.len() != k {
        return Err(Error::Shape(format!("gradient of length {} for Hessian of size {k}", grad.len())));
    }
    if n == 0 || n >= k {
        return Err(invalid("n", format!("subspace dimension {n} must lie in 1..{k}")));
    }
    let tol = grad_tol(hess);
    let norm = grad.norm();
    if !(norm >= tol) {
        return Err(Error::DegenerateGradient { norm, tol });
    }
    let basis = orthogonal_complement(grad);
    let restricted = hess.congruence(&basis);
    let eig = restricted.eigen();
    let value = eig.values.iter().take(n).sum();
    let frame = basis * eig.vectors.columns(0, n);
    Ok((value, frame))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_bounds() {
        assert!(Dims::new(2, 1).is_ok());
        assert!(Dims::new(4, 3).is_ok());
        assert!(Dims::new(1, 1).is_err());
        assert!(Dims::new(5, 1).is_err());
        assert!(Dims::new(3, 0).is_err());
        assert!(Dims::new(3, 4).is_err());
    }

    #[test]
    fn area_integrand_examples() {
        assert_eq!(area_integrand(&Gradient::zeros(3, 2)), 1.0);
        let a = Gradient::from_row_slice(2, 1, &[3.0, 4.0]);
        assert!((area_integrand(&a) - 26f64.sqrt()).abs() < 1e-14);
        let id = Gradient::new(DMatrix::identity(2, 2));
        assert!((area_integrand(&id) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn area_gradient_scalar_case() {
        assert_eq!(area_gradient(&Gradient::zeros(2, 2)).norm(), 0.0);
        let a = Gradient::from_row_slice(2, 1, &[3.0, 4.0]);
        let g = area_gradient(&a);
        let w = 26f64.sqrt();
        assert!((g.entry(0, 0) - 3.0 / w).abs() < 1e-14);
        assert!((g.entry(1, 0) - 4.0 / w).abs() < 1e-14);
    }

    #[test]
    fn small_inverse_matches_nalgebra() {
        let a = [[2.0, 0.3, -0.4], [0.3, 1.5, 0.2], [-0.4, 0.2, 1.2]];
        let (det, inv) = small_spd_inverse(&a, 3);
        let m = DMatrix::from_fn(3, 3, |i, j| a[i][j]);
        assert!((det - m.determinant()).abs() < 1e-13);
        let want = m.try_inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((inv[i][j] - want[(i, j)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn hessian_at_zero_is_identity_tensor() {
        let h = area_hessian(&Gradient::zeros(3, 2));
        let e = area_hessian_exact(&Gradient::zeros(3, 2));
        for a in 0..2 {
            for i in 0..3 {
                for b in 0..2 {
                    for j in 0..3 {
                        let want = if a == b && i == j { 1.0 } else { 0.0 };
                        assert!((h.get(a, i, b, j) - want).abs() < 1e-9);
                        assert_eq!(e.get(a, i, b, j), want);
                    }
                }
            }
        }
    }

    #[test]
    fn hessian_scalar_closed_form() {
        let p = [0.7, -1.2, 0.4];
        let a = Gradient::from_row_slice(3, 1, &p);
        let w2 = 1.0 + p.iter().map(|v| v * v).sum::<f64>();
        let h = area_hessian(&a);
        for i in 0..3 {
            for j in 0..3 {
                let d = if i == j { 1.0 } else { 0.0 };
                let want = (d - p[i] * p[j] / w2) / w2.sqrt();
                assert!((h.get(0, i, 0, j) - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pucci_examples() {
        assert_eq!(pucci_plus(&SymMatrix::identity(3), 0.5, 2.0).unwrap(), 6.0);
        let n = SymMatrix::from_diagonal(&[2.0, -1.0]);
        assert!((pucci_plus(&n, 0.5, 1.0).unwrap() - 1.5).abs() < 1e-15);
        assert!(pucci_plus(&n, 0.0, 1.0).is_err());
        assert!(pucci_plus(&n, 2.0, 1.0).is_err());
        assert!(pucci_minus(&n, -1.0, 1.0).is_err());
    }

    #[test]
    fn tangential_examples() {
        let h = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let mut e4 = DVector::zeros(4);
        e4[3] = 1.0;
        assert!((min_tangential_laplacian(&h, &e4, 2).unwrap() - 3.0).abs() < 1e-13);

        let two = SymMatrix::identity(5).scale(2.0);
        let g = DVector::from_vec(vec![0.3, -1.0, 0.2, 0.0, 2.0]);
        assert!((min_tangential_laplacian(&two, &g, 3).unwrap() - 6.0).abs() < 1e-13);
    }

    #[test]
    fn tangential_degenerate_gradient() {
        let h = SymMatrix::identity(3);
        let g = DVector::from_vec(vec![1e-12, 0.0, 0.0]);
        assert!(matches!(
            min_tangential_laplacian(&h, &g, 2),
            Err(Error::DegenerateGradient { .. })
        ));
        let g = DVector::from_vec(vec![1.0, 0.0]);
        assert!(min_tangential_laplacian(&h, &g, 2).is_err());
    }

    #[test]
    fn cone_examples() {
        let c = Cone::new(0.3).unwrap();
        assert!(c.contains(&AmbientPoint::new(vec![0.5, -0.1], vec![0.0])));
        assert!(!c.contains(&AmbientPoint::new(vec![0.0, 0.0], vec![0.0, 1e-9])));
        let quarter = Cone::new(std::f64::consts::FRAC_PI_4).unwrap();
        assert!(quarter.contains(&AmbientPoint::new(vec![3.0, 4.0], vec![0.0, 5.0])));
        assert!(quarter.contains(&AmbientPoint::new(vec![0.1, 0.7], vec![0.5, -0.5])));
        assert!(Cone::new(std::f64::consts::FRAC_PI_2).is_err());
        assert!(Cone::new(-0.1).is_err());
    }
}
