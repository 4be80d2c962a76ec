use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::certify::{certify_ball, Verdict};
use super::families::{family_l1, family_l35, family_quadratic, HarmonicTerm, Paraboloid, TestFunction};
use super::fields::{FieldDescriptor, ScalarField};
use crate::error::{invalid, Result};
use crate::flatness::{best_affine_fit, best_harmonic_fit};
use crate::geometry::{AmbientPoint, Gradient};
use crate::grid::{norm, GridMap};
use crate::maps::{AffineMap, QuadraticMap};
use crate::sampling::stream_rng;
use crate::solver::laplace_in_place;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchingOptions {
    /// The interior maximum must beat the boundary band by more than this.
    pub touch_tol: f64,
    /// Radius of the local certification ball, in lattice spacings.
    pub local_radius: f64,
    /// Lattice spacing of the local certification, in lattice spacings.
    pub local_spacing: f64,
    pub local_quasi_random: usize,
    pub seed: u64,
}

impl Default for TouchingOptions {
    fn default() -> Self {
        Self {
            touch_tol: 0.0,
            local_radius: 4.0,
            local_spacing: 2.0,
            local_quasi_random: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouchingReport {
    pub field: FieldDescriptor,
    /// `c = max H(x, u(x))` over the graph points.
    pub max_value: f64,
    pub argmax: AmbientPoint,
    /// At lattice distance at least `2h` from the edge of the mask.
    pub interior: bool,
    /// `Γ ⊂ {H <= c}`; true by the choice of `c`.
    pub side_ok: bool,
    /// Largest value over graph points within `2h` of the mask edge.
    pub boundary_band_max: f64,
    pub touch_tol: f64,
    /// Verdict of the local certification around the argmax, when run.
    pub local_verdict: Option<Verdict>,
    pub local_min_margin: Option<f64>,
    pub violation: bool,
}

/// Looks for the graph of `u` touching a level set of `h` from below at an
/// interior point where `h` is certified as a comparison function.
pub fn touching_check(u: &GridMap, h: &dyn ScalarField) -> Result<TouchingReport> {
    touching_check_with(u, h, &TouchingOptions::default())
}

pub fn touching_check_with(u: &GridMap, h: &dyn ScalarField, opts: &TouchingOptions) -> Result<TouchingReport> {
    let dims = u.dims();
    if h.dims() != dims {
        return Err(invalid("field", "field and map dimensions differ"));
    }
    let sp = u.spacing();
    let edge = u.mask().radius();
    let indices = u.mask_indices();
    let values: Vec<(f64, bool)> = indices
        .par_iter()
        .map(|&idx| {
            let x = u.position(idx);
            let p = DVector::from_iterator(dims.ambient(), x.iter().chain(u.value(idx)).copied());
            (h.value(&p), edge - norm(&x) >= 2.0 * sp - 1e-12)
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    let mut band = f64::NEG_INFINITY;
    for (k, &(v, inner)) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        if !inner {
            band = band.max(v);
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    let (k, max_value) = best.ok_or(crate::error::Error::EmptySampleSet { excluded: indices.len() })?;
    let idx = indices[k];
    let interior = values[k].1;
    let argmax = AmbientPoint::new(u.position(idx), u.value(idx).to_vec());
    let mut report = TouchingReport {
        field: h.descriptor(),
        max_value,
        argmax,
        interior,
        side_ok: true,
        boundary_band_max: band,
        touch_tol: opts.touch_tol,
        local_verdict: None,
        local_min_margin: None,
        violation: false,
    };
    if interior && max_value - band > opts.touch_tol {
        let center = report.argmax.to_vector();
        match certify_ball(h, &center, opts.local_radius * sp, opts.local_spacing * sp, opts.local_quasi_random, opts.seed) {
            Ok(cert) => {
                report.local_verdict = Some(cert.verdict);
                report.local_min_margin = Some(cert.min_margin);
                report.violation = cert.verdict == Verdict::Pass;
            }
            Err(crate::error::Error::EmptySampleSet { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenOptions {
    /// Smallest flatness scale the screen resolves; field widths never go
    /// below it.
    pub resolution: f64,
    /// Passed to every touching check, as a multiple of the field's `eps`.
    pub relative_touch_tol: f64,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        Self {
            resolution: 1e-3,
            relative_touch_tol: 1e-6,
        }
    }
}

/// Runs `count` touching checks against randomized members of the three
/// built-in families, each anchored on a fit of `u` so that its level sets
/// graze the graph. Field `k` draws from ChaCha stream `k` of `seed`.
pub fn viscosity_screen(u: &GridMap, seed: u64, count: usize) -> Result<Vec<TouchingReport>> {
    viscosity_screen_with(u, seed, count, &ScreenOptions::default())
}

pub fn viscosity_screen_with(u: &GridMap, seed: u64, count: usize, opts: &ScreenOptions) -> Result<Vec<TouchingReport>> {
    if count == 0 {
        return Err(invalid("count", "must be at least 1"));
    }
    if !(opts.resolution > 0.0) {
        return Err(invalid("resolution", "must be positive"));
    }
    let r = u.mask().radius();
    let affine = best_affine_fit(u, r)?;
    let quadratic = best_harmonic_fit(u, r)?;
    (0..count)
        .into_par_iter()
        .map(|k| screen_one(u, &affine, &quadratic, seed, k, opts))
        .collect()
}

fn sup_gap(u: &GridMap, f: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    u.mask_indices()
        .into_iter()
        .map(|i| {
            let v = f(&u.position(i));
            norm(&u.value(i).iter().zip(v).map(|(a, b)| a - b).collect::<Vec<_>>())
        })
        .fold(0.0, f64::max)
}

fn tilt(l: &AffineMap, size: f64, rng: &mut impl Rng) -> AffineMap {
    let (n, m) = (l.n(), l.m());
    let b = l.b.iter().map(|v| v + size * rng.random_range(-0.5..0.5)).collect();
    let a = l.a.as_matrix() + DMatrix::from_fn(n, m, |_, _| size * rng.random_range(-0.5..0.5));
    AffineMap { b, a: Gradient::new(a) }
}

fn random_center(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        if norm(&c) <= 0.5 {
            return c;
        }
    }
}

fn screen_one(u: &GridMap, affine: &AffineMap, quadratic: &QuadraticMap, seed: u64, k: usize, opts: &ScreenOptions) -> Result<TouchingReport> {
    let mut rng = stream_rng(seed, k as u64);
    let n = u.dims().n;
    let scale: f64 = rng.random_range(1.0..2.0);
    let field: Box<dyn ScalarField> = match k % 3 {
        0 => {
            let base = sup_gap(u, |x| affine.eval(x)).max(opts.resolution);
            let l = tilt(affine, base, &mut rng);
            let eps = sup_gap(u, |x| l.eval(x)).max(opts.resolution) * scale;
            let phi: Arc<dyn TestFunction> = Arc::new(Paraboloid::new(random_center(n, &mut rng), rng.random_range(0.5..1.0) / (4.0 * n as f64)));
            Box::new(family_l1(&l, eps, phi)?)
        }
        1 => {
            let base = sup_gap(u, |x| affine.eval(x)).max(opts.resolution);
            let l = tilt(affine, base, &mut rng);
            let eps = sup_gap(u, |x| l.eval(x)).max(opts.resolution) * scale;
            let eta = rng.random_range(0.05..0.5);
            let mut h = u.map(|x, v| v.iter().zip(l.eval(x)).map(|(a, b)| (a - b) / eps).collect())?;
            laplace_in_place(&mut h, 1e-10)?;
            Box::new(family_l35(HarmonicTerm::Grid(Arc::new(h)), &QuadraticMap::from_affine(l), eps, eta)?)
        }
        _ => {
            let beta = rng.random_range(0.55..0.95);
            let base = sup_gap(u, |x| quadratic.eval(x)).max(opts.resolution);
            let q = QuadraticMap {
                affine: tilt(&quadratic.affine, base, &mut rng),
                quad: quadratic.quad.clone(),
            };
            let coef = q.max_quadratic_coefficient();
            let eps = (sup_gap(u, |x| q.eval(x)).max(opts.resolution) * scale).max(coef.powf(1.0 / beta) * (1.0 + 1e-6));
            let phi: Arc<dyn TestFunction> = Arc::new(Paraboloid::new(
                random_center(n, &mut rng),
                rng.random_range(0.5..1.0) * eps.powf(2.0 * beta - 1.0) / (2.0 * n as f64),
            ));
            Box::new(family_quadratic(&q, eps, beta, Some(phi))?)
        }
    };
    let eps = field.descriptor().params["eps"].as_f64().unwrap_or(opts.resolution);
    let topts = TouchingOptions {
        touch_tol: opts.relative_touch_tol * eps,
        seed: seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        ..TouchingOptions::default()
    };
    touching_check_with(u, field.as_ref(), &topts)
}
