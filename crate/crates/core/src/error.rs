use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions n={n}, m={m}: need 2 <= n <= 4, 1 <= m <= 3")]
    InvalidDims { n: usize, m: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("gradient norm {norm:e} below tolerance {tol:e}; level set normal undefined")]
    DegenerateGradient { norm: f64, tol: f64 },

    #[error("lattice point {index} has no full central-difference stencil inside the mask")]
    BoundaryProximity { index: usize },

    #[error("every sample point was excluded ({excluded} excluded)")]
    EmptySampleSet { excluded: usize },

    #[error("iteration diverged: sup|u| = {sup:e} exceeds bound {bound:e} at iteration {iteration}")]
    Diverged { iteration: usize, sup: f64, bound: f64 },

    #[error("not converged after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("least-squares system is singular on the sample ({points} points)")]
    DegenerateSample { points: usize },

    #[error("flatness precondition violated: measured {measured:e} > eps {eps:e}")]
    FlatnessViolated { measured: f64, eps: f64 },

    #[error("harmonic-constrained quadratic fit failed")]
    NonHarmonicFit,

    #[error("radius {radius} is below 4h = {min}")]
    ScaleTooFine { radius: f64, min: f64 },

    #[error("precondition unmet: {0}")]
    PreconditionUnmet(String),

    #[error("interpolation stencil at {0:?} leaves the mask")]
    OutsideStencil(Vec<f64>),

    #[error("malformed grid file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
