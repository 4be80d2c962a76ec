//! Numerical toolkit for the minimal surface system in arbitrary codimension.

pub mod comparison;
pub mod error;
pub mod experiments;
pub mod flatness;
pub mod geometry;
pub mod grid;
pub mod interp;
pub mod linalg;
pub mod maps;
pub mod residual;
pub mod sampling;
pub mod solver;

pub use error::{Error, Result};
