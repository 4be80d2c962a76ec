//! Affine and harmonic quadratic maps `ℝⁿ → ℝᵐ`, and least-squares fits of
//! sampled data by them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Gradient;
use crate::linalg::SymMatrix;

/// Tolerance on `tr Q^α` for a quadratic map to count as harmonic.
pub const HARMONIC_TOL: f64 = 1e-12;

/// `l(x) = b + Aᵀx`, i.e. `l^α(x) = b^α + Σᵢ A_{iα} xᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub b: Vec<f64>,
    pub a: Gradient,
}

impl AffineMap {
    pub fn new(b: Vec<f64>, a: Gradient) -> Result<Self> {
        if b.len() != a.m() {
            return Err(Error::Shape(format!("offset has {} components, slope has {}", b.len(), a.m())));
        }
        Ok(Self { b, a })
    }

    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            b: vec![0.0; m],
            a: Gradient::zeros(n, m),
        }
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m())
            .map(|al| self.b[al] + (0..self.n()).map(|i| self.a.entry(i, al) * x[i]).sum::<f64>())
            .collect()
    }

    pub fn slope_norm(&self) -> f64 {
        self.a.norm()
    }

    /// `x ↦ R l(x) + c` for an `m x m` matrix `R`.
    pub fn transform_values(&self, r: &DMatrix<f64>, c: &[f64]) -> Self {
        let b = r * DVector::from_column_slice(&self.b) + DVector::from_column_slice(c);
        let a = self.a.as_matrix() * r.transpose();
        Self {
            b: b.iter().copied().collect(),
            a: Gradient::new(a),
        }
    }
}

/// `q^α(x) = l^α(x) + xᵀ Q^α x` with every `Q^α` trace free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticMap {
    pub affine: AffineMap,
    pub quad: Vec<SymMatrix>,
}

impl QuadraticMap {
    pub fn new(affine: AffineMap, quad: Vec<SymMatrix>) -> Result<Self> {
        if quad.len() != affine.m() || quad.iter().any(|q| q.dim() != affine.n()) {
            return Err(Error::Shape("quadratic coefficients do not match the affine part".into()));
        }
        for (alpha, q) in quad.iter().enumerate() {
            if q.trace().abs() > HARMONIC_TOL {
                return Err(invalid("q", format!("component {alpha} has trace {:e}; not harmonic", q.trace())));
            }
        }
        Ok(Self { affine, quad })
    }

    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            affine: AffineMap::zero(n, m),
            quad: vec![SymMatrix::zeros(n); m],
        }
    }

    pub fn from_affine(affine: AffineMap) -> Self {
        let (n, m) = (affine.n(), affine.m());
        Self {
            affine,
            quad: vec![SymMatrix::zeros(n); m],
        }
    }

    pub fn n(&self) -> usize {
        self.affine.n()
    }

    pub fn m(&self) -> usize {
        self.affine.m()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        self.affine
            .eval(x)
            .into_iter()
            .zip(&self.quad)
            .map(|(l, q)| l + xv.dot(&(q.as_matrix() * &xv)))
            .collect()
    }

    /// Jacobian as an `n x m` matrix, entry `(i, α) = ∂ᵢ q^α`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let xv = DVector::from_column_slice(x);
        let mut j = self.affine.a.as_matrix().clone();
        for (alpha, q) in self.quad.iter().enumerate() {
            let g = q.as_matrix() * &xv * 2.0;
            for i in 0..self.n() {
                j[(i, alpha)] += g[i];
            }
        }
        j
    }

    /// Hessian of component `α`: `2 Q^α`.
    pub fn hessian(&self, alpha: usize) -> DMatrix<f64> {
        self.quad[alpha].as_matrix() * 2.0
    }

    /// Largest coefficient magnitude over the affine and quadratic parts.
    pub fn max_coefficient(&self) -> f64 {
        let lin = self
            .affine
            .b
            .iter()
            .chain(self.affine.a.as_matrix().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        self.quad
            .iter()
            .flat_map(|q| q.as_matrix().iter().copied().collect::<Vec<_>>())
            .fold(lin, |m, v| m.max(v.abs()))
    }

    pub fn max_quadratic_coefficient(&self) -> f64 {
        self.quad
            .iter()
            .flat_map(|q| q.as_matrix().iter().copied().collect::<Vec<_>>())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Componentwise least-squares affine fit of `values` sampled at `points`.
pub fn fit_affine(points: &[Vec<f64>], values: &[&[f64]]) -> Result<AffineMap> {
    let n = points.first().map(|p| p.len()).unwrap_or(0);
    let m = values.first().map(|v| v.len()).unwrap_or(0);
    let design = DMatrix::from_fn(points.len(), n + 1, |r, c| if c == 0 { 1.0 } else { points[r][c - 1] });
    let coef = least_squares(&design, values, m)?;
    let b = (0..m).map(|al| coef[(0, al)]).collect();
    let a = Gradient::new(DMatrix::from_fn(n, m, |i, al| coef[(i + 1, al)]));
    AffineMap::new(b, a)
}

/// Componentwise least-squares fit by harmonic quadratics.
///
/// Trace-free quadratic forms are parameterized by the off-diagonal
/// products `xᵢxⱼ` and the differences `xᵢ² − xₙ²`, so the constraint holds
/// exactly for every coefficient vector.
pub fn fit_harmonic_quadratic(points: &[Vec<f64>], values: &[&[f64]]) -> Result<QuadraticMap> {
    let n = points.first().map(|p| p.len()).unwrap_or(0);
    let m = values.first().map(|v| v.len()).unwrap_or(0);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let cols = 1 + n + pairs.len() + (n - 1);
    let design = DMatrix::from_fn(points.len(), cols, |r, c| {
        let x = &points[r];
        match c {
            0 => 1.0,
            c if c <= n => x[c - 1],
            c if c <= n + pairs.len() => {
                let (i, j) = pairs[c - n - 1];
                x[i] * x[j]
            }
            c => {
                let i = c - n - pairs.len() - 1;
                x[i] * x[i] - x[n - 1] * x[n - 1]
            }
        }
    });
    let coef = least_squares(&design, values, m).map_err(|_| Error::NonHarmonicFit)?;
    let b = (0..m).map(|al| coef[(0, al)]).collect();
    let a = Gradient::new(DMatrix::from_fn(n, m, |i, al| coef[(i + 1, al)]));
    let quad = (0..m)
        .map(|al| {
            let mut q = DMatrix::zeros(n, n);
            for (k, &(i, j)) in pairs.iter().enumerate() {
                let c = coef[(1 + n + k, al)] * 0.5;
                q[(i, j)] = c;
                q[(j, i)] = c;
            }
            for i in 0..n - 1 {
                let d = coef[(1 + n + pairs.len() + i, al)];
                q[(i, i)] += d;
                q[(n - 1, n - 1)] -= d;
            }
            SymMatrix::new(q).expect("square")
        })
        .collect();
    QuadraticMap::new(AffineMap::new(b, a)?, quad).map_err(|_| Error::NonHarmonicFit)
}

// Column-pivot-free Householder QR least squares; rejects rank deficiency.
fn least_squares(design: &DMatrix<f64>, values: &[&[f64]], m: usize) -> Result<DMatrix<f64>> {
    let (rows, cols) = design.shape();
    if rows < cols || values.len() != rows {
        return Err(Error::DegenerateSample { points: rows });
    }
    let rhs = DMatrix::from_fn(rows, m, |r, c| values[r][c]);
    let qr = design.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * diag_max.max(1e-300)) {
        return Err(Error::DegenerateSample { points: rows });
    }
    let qtb = qr.q().transpose() * rhs;
    r.solve_upper_triangular(&qtb).ok_or(Error::DegenerateSample { points: rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(f: impl Fn(&[f64]) -> Vec<f64>, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pts = Vec::new();
        let steps = 9;
        let total = steps_pow(steps, n);
        for k in 0..total {
            let mut rem = k;
            let x: Vec<f64> = (0..n)
                .map(|_| {
                    let i = rem % steps;
                    rem /= steps;
                    -1.0 + 2.0 * i as f64 / (steps - 1) as f64
                })
                .collect();
            pts.push(x);
        }
        let vals = pts.iter().map(|x| f(x)).collect();
        (pts, vals)
    }

    fn steps_pow(s: usize, n: usize) -> usize {
        s.pow(n as u32)
    }

    #[test]
    fn affine_fit_recovers_affine_map() {
        let l = AffineMap::new(vec![0.5, -1.0], Gradient::from_row_slice(3, 2, &[1.0, 0.2, -0.3, 0.0, 0.7, 2.0])).unwrap();
        let (pts, vals) = sample(|x| l.eval(x), 3);
        let refs: Vec<&[f64]> = vals.iter().map(|v| v.as_slice()).collect();
        let fit = fit_affine(&pts, &refs).unwrap();
        for (a, b) in fit.b.iter().zip(&l.b) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((fit.a.as_matrix() - l.a.as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn harmonic_fit_recovers_harmonic_quadratic() {
        let q = QuadraticMap::new(
            AffineMap::new(vec![0.1], Gradient::from_row_slice(3, 1, &[0.3, -0.2, 0.5])).unwrap(),
            vec![SymMatrix::from_fn(3, |i, j| match (i, j) {
                (0, 0) => 1.0,
                (1, 1) => -0.25,
                (2, 2) => -0.75,
                (0, 2) => 0.4,
                _ => 0.0,
            })],
        )
        .unwrap();
        let (pts, vals) = sample(|x| q.eval(x), 3);
        let refs: Vec<&[f64]> = vals.iter().map(|v| v.as_slice()).collect();
        let fit = fit_harmonic_quadratic(&pts, &refs).unwrap();
        assert!((fit.quad[0].as_matrix() - q.quad[0].as_matrix()).amax() < 1e-12);
        assert!(fit.quad[0].trace().abs() < HARMONIC_TOL);
    }

    #[test]
    fn non_harmonic_rejected_and_degenerate_sample() {
        let bad = QuadraticMap::new(AffineMap::zero(2, 1), vec![SymMatrix::identity(2)]);
        assert!(bad.is_err());
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        let vals = [[0.0], [1.0], [2.0]];
        let refs: Vec<&[f64]> = vals.iter().map(|v| v.as_slice()).collect();
        assert!(matches!(fit_affine(&pts, &refs), Err(Error::DegenerateSample { .. })));
    }
}
