use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::Dims;
use crate::linalg::SymMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldTag {
    Analytic,
    FiniteDifference,
}

/// Family name, evaluation tag and parameters; serialized into certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub family: String,
    pub tag: FieldTag,
    pub params: serde_json::Value,
}

/// An ambient C² function `H` on `ℝⁿ⁺ᵐ`, points ordered `(x, z)`.
pub trait ScalarField: Send + Sync {
    fn dims(&self) -> Dims;
    fn value(&self, p: &DVector<f64>) -> f64;
    fn gradient(&self, p: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, p: &DVector<f64>) -> SymMatrix;
    fn descriptor(&self) -> FieldDescriptor;

    /// Points where the field is not C² and certification must skip.
    fn excluded(&self, _p: &DVector<f64>) -> bool {
        false
    }

    /// Known bound on the error of `tr` of the Hessian over any `n`-plane,
    /// added to the certification tolerance.
    fn margin_slack(&self, _p: &DVector<f64>) -> f64 {
        0.0
    }
}

impl<F: ScalarField + ?Sized> ScalarField for Arc<F> {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn value(&self, p: &DVector<f64>) -> f64 {
        (**self).value(p)
    }
    fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        (**self).gradient(p)
    }
    fn hessian(&self, p: &DVector<f64>) -> SymMatrix {
        (**self).hessian(p)
    }
    fn descriptor(&self) -> FieldDescriptor {
        (**self).descriptor()
    }
    fn excluded(&self, p: &DVector<f64>) -> bool {
        (**self).excluded(p)
    }
    fn margin_slack(&self, p: &DVector<f64>) -> f64 {
        (**self).margin_slack(p)
    }
}

/// `H(X) = ½ Xᵀ Q X + b·X + c`.
#[derive(Debug, Clone)]
pub struct QuadraticField {
    dims: Dims,
    q: SymMatrix,
    b: DVector<f64>,
    c: f64,
    name: String,
}

impl QuadraticField {
    pub fn new(dims: Dims, q: SymMatrix, b: DVector<f64>, c: f64) -> Result<Self> {
        let k = dims.ambient();
        if q.dim() != k || b.len() != k {
            return Err(invalid("field", format!("quadratic field must act on R^{k}")));
        }
        Ok(Self {
            dims,
            q,
            b,
            c,
            name: "quadratic".into(),
        })
    }

    /// `sign · |X − X₀|²`.
    pub fn sphere(dims: Dims, center: &DVector<f64>, sign: f64) -> Result<Self> {
        let k = dims.ambient();
        let q = SymMatrix::identity(k).scale(2.0 * sign);
        let b = center * (-2.0 * sign);
        let mut f = Self::new(dims, q, b, sign * center.norm_squared())?;
        f.name = "sphere".into();
        Ok(f)
    }

    /// `b · X`.
    pub fn linear(dims: Dims, b: DVector<f64>) -> Result<Self> {
        let mut f = Self::new(dims, SymMatrix::zeros(dims.ambient()), b, 0.0)?;
        f.name = "linear".into();
        Ok(f)
    }
}

impl ScalarField for QuadraticField {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn value(&self, p: &DVector<f64>) -> f64 {
        0.5 * p.dot(&(self.q.as_matrix() * p)) + self.b.dot(p) + self.c
    }
    fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        self.q.as_matrix() * p + &self.b
    }
    fn hessian(&self, _p: &DVector<f64>) -> SymMatrix {
        self.q.clone()
    }
    fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor {
            family: self.name.clone(),
            tag: FieldTag::Analytic,
            params: serde_json::json!({
                "q": self.q.as_matrix().row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
                "b": self.b.iter().copied().collect::<Vec<_>>(),
                "c": self.c,
            }),
        }
    }
}

pub type RawCallback = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Raw value callback with central-difference gradient and Hessian.
#[derive(Clone)]
pub struct FiniteDifferenceField {
    dims: Dims,
    f: RawCallback,
    step: f64,
    name: String,
}

impl std::fmt::Debug for FiniteDifferenceField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FiniteDifferenceField")
            .field("name", &self.name)
            .field("step", &self.step)
            .finish()
    }
}

impl FiniteDifferenceField {
    pub const DEFAULT_STEP: f64 = 1e-4;

    pub fn new(dims: Dims, name: impl Into<String>, f: RawCallback) -> Self {
        Self {
            dims,
            f,
            step: Self::DEFAULT_STEP,
            name: name.into(),
        }
    }

    pub fn with_step(mut self, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(invalid("step", "must be positive"));
        }
        self.step = step;
        Ok(self)
    }
}

impl ScalarField for FiniteDifferenceField {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn value(&self, p: &DVector<f64>) -> f64 {
        (self.f)(p)
    }
    fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        let h = self.step;
        DVector::from_fn(p.len(), |i, _| {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += h;
            b[i] -= h;
            ((self.f)(&a) - (self.f)(&b)) / (2.0 * h)
        })
    }
    fn hessian(&self, p: &DVector<f64>) -> SymMatrix {
        let h = self.step;
        let at = |di: usize, si: f64, dj: usize, sj: f64| {
            let mut q = p.clone();
            q[di] += si * h;
            q[dj] += sj * h;
            (self.f)(&q)
        };
        let f0 = (self.f)(p);
        SymMatrix::from_fn(p.len(), |i, j| {
            if i == j {
                (at(i, 1.0, i, 0.0) - 2.0 * f0 + at(i, -1.0, i, 0.0)) / (h * h)
            } else {
                (at(i, 1.0, j, 1.0) - at(i, 1.0, j, -1.0) - at(i, -1.0, j, 1.0) + at(i, -1.0, j, -1.0)) / (4.0 * h * h)
            }
        })
    }
    fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor {
            family: self.name.clone(),
            tag: FieldTag::FiniteDifference,
            params: serde_json::json!({ "step": self.step }),
        }
    }
}

/// `X ↦ H(Rᵀ(X − t))`: the field moved by the rigid motion `X ↦ RX + t`.
#[derive(Debug, Clone)]
pub struct RigidMotion<F> {
    pub inner: F,
    rotation: DMatrix<f64>,
    translation: DVector<f64>,
}

impl<F: ScalarField> RigidMotion<F> {
    pub fn new(inner: F, rotation: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        let k = inner.dims().ambient();
        if rotation.shape() != (k, k) || translation.len() != k {
            return Err(invalid("rotation", format!("rigid motion must act on R^{k}")));
        }
        let defect = (rotation.transpose() * &rotation - DMatrix::identity(k, k)).amax();
        if defect > 1e-10 {
            return Err(invalid("rotation", format!("not orthogonal (defect {defect:e})")));
        }
        Ok(Self {
            inner,
            rotation,
            translation,
        })
    }

    fn pull(&self, p: &DVector<f64>) -> DVector<f64> {
        self.rotation.transpose() * (p - &self.translation)
    }

    pub fn push(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.rotation * p + &self.translation
    }
}

impl<F: ScalarField> ScalarField for RigidMotion<F> {
    fn dims(&self) -> Dims {
        self.inner.dims()
    }
    fn value(&self, p: &DVector<f64>) -> f64 {
        self.inner.value(&self.pull(p))
    }
    fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.rotation * self.inner.gradient(&self.pull(p))
    }
    fn hessian(&self, p: &DVector<f64>) -> SymMatrix {
        self.inner.hessian(&self.pull(p)).congruence(&self.rotation.transpose())
    }
    fn descriptor(&self) -> FieldDescriptor {
        let mut d = self.inner.descriptor();
        d.family = format!("{}+rigid-motion", d.family);
        d
    }
    fn excluded(&self, p: &DVector<f64>) -> bool {
        self.inner.excluded(&self.pull(p))
    }
    fn margin_slack(&self, p: &DVector<f64>) -> f64 {
        self.inner.margin_slack(&self.pull(p))
    }
}

/// `H + c`: same level sets, relabelled.
#[derive(Debug, Clone)]
pub struct Shifted<F> {
    pub inner: F,
    pub offset: f64,
}

impl<F: ScalarField> ScalarField for Shifted<F> {
    fn dims(&self) -> Dims {
        self.inner.dims()
    }
    fn value(&self, p: &DVector<f64>) -> f64 {
        self.inner.value(p) + self.offset
    }
    fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(p)
    }
    fn hessian(&self, p: &DVector<f64>) -> SymMatrix {
        self.inner.hessian(p)
    }
    fn descriptor(&self) -> FieldDescriptor {
        self.inner.descriptor()
    }
    fn excluded(&self, p: &DVector<f64>) -> bool {
        self.inner.excluded(p)
    }
    fn margin_slack(&self, p: &DVector<f64>) -> f64 {
        self.inner.margin_slack(p)
    }
}
