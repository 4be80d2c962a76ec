use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::fields::{FieldDescriptor, FieldTag, ScalarField};
use crate::error::{invalid, Error, Result};
use crate::geometry::{pucci_plus, Dims};
use crate::grid::{GridMap, PointClass};
use crate::interp::cubic_jet;
use crate::linalg::SymMatrix;
use crate::maps::{AffineMap, QuadraticMap};

/// Singular-tube exclusion radius, as a fraction of `eps`.
pub const RHO_MIN: f64 = 0.1;

/// A C² scalar `φ` on `B₁ⁿ`.
pub trait TestFunction: Send + Sync + Debug {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
    fn hessian(&self, x: &[f64]) -> SymMatrix;
    fn describe(&self) -> serde_json::Value;
}

/// `φ(x) = a (1 − |x − c|²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Paraboloid {
    pub center: Vec<f64>,
    pub coeff: f64,
}

impl Paraboloid {
    pub fn new(center: Vec<f64>, coeff: f64) -> Self {
        Self { center, coeff }
    }

    /// `(1 − |x|²)/(4n)`.
    pub fn l1_default(n: usize) -> Self {
        Self::new(vec![0.0; n], 1.0 / (4.0 * n as f64))
    }

    /// `ε^{2β−1} (1 − |x|²)/(2n)`, so that `Δφ = −ε^{2β−1}`.
    pub fn quadratic_default(n: usize, eps: f64, beta: f64) -> Self {
        Self::new(vec![0.0; n], eps.powf(2.0 * beta - 1.0) / (2.0 * n as f64))
    }
}

impl TestFunction for Paraboloid {
    fn value(&self, x: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        self.coeff * (1.0 - d2)
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, c)| -2.0 * self.coeff * (a - c)))
    }
    fn hessian(&self, x: &[f64]) -> SymMatrix {
        SymMatrix::identity(x.len()).scale(-2.0 * self.coeff)
    }
    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "paraboloid", "center": self.center, "coeff": self.coeff })
    }
}

/// Pucci ellipticity default `c₀ = 1/(4n(1+|A|²)²)`.
pub fn default_c0(n: usize, slope_norm: f64) -> f64 {
    let s = 1.0 + slope_norm * slope_norm;
    1.0 / (4.0 * n as f64 * s * s)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Admissibility {
    /// `sup|φ| + sup|Dφ| + sup‖D²φ‖` over the samples.
    pub c11_norm: f64,
    /// Largest `M⁺(D²φ, c₀, 1)` over the samples.
    pub max_pucci: f64,
    pub c0: f64,
    pub admissible: bool,
}

/// Checks `‖φ‖_{C^{1,1}} <= 1` and `M⁺(D²φ, c₀, 1) < 0` at the given points.
pub fn check_admissible(phi: &dyn TestFunction, c0: f64, points: &[Vec<f64>]) -> Result<Admissibility> {
    if points.is_empty() {
        return Err(Error::EmptySampleSet { excluded: 0 });
    }
    let (mut s0, mut s1, mut s2, mut pucci) = (0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY);
    for x in points {
        let hess = phi.hessian(x);
        let ev = hess.eigenvalues();
        s0 = s0.max(phi.value(x).abs());
        s1 = s1.max(phi.gradient(x).norm());
        s2 = s2.max(ev.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        pucci = pucci.max(pucci_plus(&hess, c0, 1.0)?);
    }
    let c11_norm = s0 + s1 + s2;
    Ok(Admissibility {
        c11_norm,
        max_pucci: pucci,
        c0,
        admissible: c11_norm <= 1.0 + 1e-12 && pucci < 0.0,
    })
}

fn split<'a>(p: &'a DVector<f64>, n: usize) -> (&'a [f64], &'a [f64]) {
    p.as_slice().split_at(n)
}

fn embed_x(block: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = block.nrows();
    let mut out = DMatrix::zeros(k, k);
    out.view_mut((0, 0), (n, n)).copy_from(block);
    out
}

/// `H(X) = |z − q(x)| − ε φ(x)` with `q` affine (the comparison family of the
/// flatness-decay lemma) or harmonic quadratic (the final-lemma family).
#[derive(Debug, Clone)]
pub struct TubeField {
    dims: Dims,
    axis: QuadraticMap,
    eps: f64,
    phi: Arc<dyn TestFunction>,
    family: &'static str,
    beta: Option<f64>,
}

impl TubeField {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn axis(&self) -> &QuadraticMap {
        &self.axis
    }

    fn offset(&self, x: &[f64], z: &[f64]) -> DVector<f64> {
        let q = self.axis.eval(x);
        DVector::from_iterator(z.len(), z.iter().zip(q).map(|(a, b)| a - b))
    }
}

/// The comparison family `|z − l(x)| − ε φ(x)`.
pub fn family_l1(l: &AffineMap, eps: f64, phi: Arc<dyn TestFunction>) -> Result<TubeField> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("eps", format!("{eps} must be positive")));
    }
    let dims = Dims::new(l.n(), l.m())?;
    Ok(TubeField {
        dims,
        axis: QuadraticMap::from_affine(l.clone()),
        eps,
        phi,
        family: "l1",
        beta: None,
    })
}

/// The comparison family `|z − q(x)| − ε φ(x)` for a harmonic quadratic `q`
/// whose quadratic coefficients are bounded by `ε^β`. `phi = None` uses
/// [`Paraboloid::quadratic_default`].
pub fn family_quadratic(q: &QuadraticMap, eps: f64, beta: f64, phi: Option<Arc<dyn TestFunction>>) -> Result<TubeField> {
    if !(beta > 0.5 && beta < 1.0) {
        return Err(invalid("beta", format!("{beta} is outside (1/2, 1)")));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("eps", format!("{eps} must be positive")));
    }
    let bound = eps.powf(beta);
    let coef = q.max_quadratic_coefficient();
    if coef > bound * (1.0 + 1e-9) {
        return Err(invalid("q", format!("quadratic coefficient {coef:e} exceeds eps^beta = {bound:e}")));
    }
    let dims = Dims::new(q.n(), q.m())?;
    let phi = phi.unwrap_or_else(|| Arc::new(Paraboloid::quadratic_default(dims.n, eps, beta)));
    Ok(TubeField {
        dims,
        axis: q.clone(),
        eps,
        phi,
        family: "quadratic",
        beta: Some(beta),
    })
}

impl ScalarField for TubeField {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn value(&self, p: &DVector<f64>) -> f64 {
        let (x, z) = split(p, self.dims.n);
        self.offset(x, z).norm() - self.eps * self.phi.value(x)
    }

    fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        let (n, m) = (self.dims.n, self.dims.m);
        let (x, z) = split(p, n);
        let w = self.offset(x, z);
        let r = w.norm();
        let nu = if r > 0.0 { w / r } else { DVector::zeros(m) };
        let gx = -(self.axis.jacobian(x) * &nu) - self.phi.gradient(x) * self.eps;
        DVector::from_iterator(n + m, gx.iter().chain(nu.iter()).copied())
    }

    fn hessian(&self, p: &DVector<f64>) -> SymMatrix {
        let (n, m) = (self.dims.n, self.dims.m);
        let k = n + m;
        let (x, z) = split(p, n);
        let w = self.offset(x, z);
        let r = w.norm();
        let nu = &w / r;
        // w = J X to first order, J = [−Dqᵀ | I]
        let mut j = DMatrix::zeros(m, k);
        let dq = self.axis.jacobian(x);
        for a in 0..m {
            for i in 0..n {
                j[(a, i)] = -dq[(i, a)];
            }
            j[(a, n + a)] = 1.0;
        }
        let proj = (DMatrix::identity(m, m) - &nu * nu.transpose()) / r;
        let mut hess = j.transpose() * proj * &j;
        let mut xx = self.phi.hessian(x).into_matrix() * (-self.eps);
        for a in 0..m {
            xx -= self.axis.hessian(a) * nu[a];
        }
        hess += embed_x(&xx, k);
        SymMatrix::new(hess).expect("square")
    }

    fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor {
            family: self.family.into(),
            tag: FieldTag::Analytic,
            params: serde_json::json!({
                "eps": self.eps,
                "beta": self.beta,
                "rho_min": RHO_MIN,
                "axis": self.axis,
                "phi": self.phi.describe(),
            }),
        }
    }

    fn excluded(&self, p: &DVector<f64>) -> bool {
        let (x, z) = split(p, self.dims.n);
        self.offset(x, z).norm() < RHO_MIN * self.eps
    }
}

/// The harmonic term `h` of the compactness family.
#[derive(Debug, Clone)]
pub enum HarmonicTerm {
    Zero,
    Polynomial(QuadraticMap),
    /// Cubic interpolant of a discrete harmonic map.
    Grid(Arc<GridMap>),
}

struct HJet {
    value: DVector<f64>,
    jacobian: DMatrix<f64>,
    hessians: Vec<DMatrix<f64>>,
}

impl HarmonicTerm {
    fn jet(&self, x: &[f64], n: usize, m: usize) -> Option<HJet> {
        match self {
            Self::Zero => Some(HJet {
                value: DVector::zeros(m),
                jacobian: DMatrix::zeros(n, m),
                hessians: vec![DMatrix::zeros(n, n); m],
            }),
            Self::Polynomial(q) => Some(HJet {
                value: DVector::from_vec(q.eval(x)),
                jacobian: q.jacobian(x),
                hessians: (0..m).map(|a| q.hessian(a)).collect(),
            }),
            Self::Grid(g) => cubic_jet(g, x).ok().map(|j| HJet {
                value: DVector::from_vec(j.value),
                jacobian: j.jacobian,
                hessians: j.hessians,
            }),
        }
    }

    fn describe(&self) -> serde_json::Value {
        match self {
            Self::Zero => serde_json::json!("zero"),
            Self::Polynomial(q) => serde_json::json!({ "polynomial": q }),
            Self::Grid(g) => serde_json::json!({
                "grid": { "points_per_axis": g.lattice().points_per_axis(), "mask_radius": g.mask().radius() }
            }),
        }
    }
}

/// Largest fourth axis difference quotient of `u` over the mask, a proxy for
/// `sup |∂⁴u|` used in interpolation error bounds.
pub fn fourth_difference_bound(u: &GridMap) -> f64 {
    let lat = u.lattice();
    let (n, m) = (u.dims().n, u.dims().m);
    let h = lat.spacing();
    let mut sup = 0.0f64;
    for idx in u.mask_indices() {
        let mi = lat.multi_index(idx);
        for a in 0..n {
            if mi[a] < 2 || mi[a] + 2 >= lat.points_per_axis() {
                continue;
            }
            let s = lat.stride(a);
            let pts = [idx - 2 * s, idx - s, idx, idx + s, idx + 2 * s];
            if pts.iter().any(|&j| u.class(j) == PointClass::Outside) {
                continue;
            }
            for al in 0..m {
                let v: Vec<f64> = pts.iter().map(|&j| u.value(j)[al]).collect();
                let d4 = v[0] - 4.0 * v[1] + 6.0 * v[2] - 4.0 * v[3] + v[4];
                sup = sup.max(d4.abs() / h.powi(4));
            }
        }
    }
    sup
}

/// `H(X) = |f(X)|² + η|x|²` with `f(X) = (z − a(x))/ε − h(x)`.
#[derive(Debug, Clone)]
pub struct L35Field {
    dims: Dims,
    approx: QuadraticMap,
    h: HarmonicTerm,
    eps: f64,
    eta: f64,
    // bounds on the interpolation error of Dh and D²h
    jac_error: f64,
    hess_error: f64,
}

/// The compactness family. `approx` is the affine or quadratic approximant
/// (pass `QuadraticMap::from_affine` for the affine case). `eta = 0` is
/// allowed and gives the marginal limit field.
pub fn family_l35(h: HarmonicTerm, approx: &QuadraticMap, eps: f64, eta: f64) -> Result<L35Field> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("eps", format!("{eps} must be positive")));
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(invalid("eta", format!("{eta} must be nonnegative")));
    }
    let dims = Dims::new(approx.n(), approx.m())?;
    let (jac_error, hess_error) = match &h {
        HarmonicTerm::Grid(g) => {
            if g.dims() != dims {
                return Err(Error::Shape("harmonic grid dimensions differ from the approximant".into()));
            }
            let sp = g.spacing();
            let m4 = fourth_difference_bound(g);
            (sp.powi(3) * m4, sp * sp * m4)
        }
        HarmonicTerm::Polynomial(q) => {
            if q.n() != dims.n || q.m() != dims.m {
                return Err(Error::Shape("harmonic polynomial dimensions differ from the approximant".into()));
            }
            (0.0, 0.0)
        }
        HarmonicTerm::Zero => (0.0, 0.0),
    };
    Ok(L35Field {
        dims,
        approx: approx.clone(),
        h,
        eps,
        eta,
        jac_error,
        hess_error,
    })
}

impl L35Field {
    // f and its Jacobian J_f (m x k); None when h is not available at x.
    fn parts(&self, p: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>, HJet)> {
        let (n, m) = (self.dims.n, self.dims.m);
        let (x, z) = split(p, n);
        let hj = self.h.jet(x, n, m)?;
        let a = self.approx.eval(x);
        let da = self.approx.jacobian(x);
        let f = DVector::from_fn(m, |al, _| (z[al] - a[al]) / self.eps - hj.value[al]);
        let mut jf = DMatrix::zeros(m, n + m);
        for al in 0..m {
            for i in 0..n {
                jf[(al, i)] = -da[(i, al)] / self.eps - hj.jacobian[(i, al)];
            }
            jf[(al, n + al)] = 1.0 / self.eps;
        }
        Some((f, jf, hj))
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl ScalarField for L35Field {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn value(&self, p: &DVector<f64>) -> f64 {
        let n = self.dims.n;
        match self.parts(p) {
            Some((f, _, _)) => f.norm_squared() + self.eta * p.rows(0, n).norm_squared(),
            None => f64::NAN,
        }
    }

    fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        let n = self.dims.n;
        let Some((f, jf, _)) = self.parts(p) else {
            return DVector::from_element(p.len(), f64::NAN);
        };
        let mut g = jf.transpose() * f * 2.0;
        for i in 0..n {
            g[i] += 2.0 * self.eta * p[i];
        }
        g
    }

    fn hessian(&self, p: &DVector<f64>) -> SymMatrix {
        let (n, m) = (self.dims.n, self.dims.m);
        let k = n + m;
        let Some((f, jf, hj)) = self.parts(p) else {
            return SymMatrix::from_fn(k, |_, _| f64::NAN);
        };
        let mut hess = jf.transpose() * &jf * 2.0;
        let mut xx = DMatrix::identity(n, n) * (2.0 * self.eta);
        for al in 0..m {
            let d2f = -(self.approx.hessian(al) / self.eps + &hj.hessians[al]);
            xx += d2f * (2.0 * f[al]);
        }
        hess += embed_x(&xx, k);
        SymMatrix::new(hess).expect("square")
    }

    fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor {
            family: "l35".into(),
            tag: FieldTag::Analytic,
            params: serde_json::json!({
                "eps": self.eps,
                "eta": self.eta,
                "approx": self.approx,
                "h": self.h.describe(),
                "interp_jacobian_error": self.jac_error,
                "interp_hessian_error": self.hess_error,
            }),
        }
    }

    fn excluded(&self, p: &DVector<f64>) -> bool {
        let (x, _) = split(p, self.dims.n);
        self.h.jet(x, self.dims.n, self.dims.m).is_none()
    }

    fn margin_slack(&self, p: &DVector<f64>) -> f64 {
        if self.hess_error == 0.0 {
            return 0.0;
        }
        let Some((f, jf, _)) = self.parts(p) else {
            return 0.0;
        };
        let n = self.dims.n as f64;
        2.0 * n * (f.norm() * self.hess_error + 2.0 * jf.norm() * self.jac_error + self.jac_error * self.jac_error)
    }
}
