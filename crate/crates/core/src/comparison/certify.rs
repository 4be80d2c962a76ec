use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fields::{FieldDescriptor, ScalarField};
use crate::error::{invalid, Error, Result};
use crate::geometry::{grad_tol, min_tangential_laplacian, AmbientPoint};
use crate::maps::QuadraticMap;
use crate::sampling::{ball_lattice, Halton};

/// Number of worst samples kept in a certificate.
pub const WORST_KEPT: usize = 16;
pub const DEFAULT_QUASI_RANDOM: usize = 1000;

/// `min_tangential_laplacian(D²H(X), ∇H(X), n)`; positive exactly when `H`
/// satisfies the comparison condition at `X`.
pub fn is_comparison_at(h: &dyn ScalarField, x: &AmbientPoint, n: usize) -> Result<f64> {
    let p = x.to_vector();
    if p.len() != h.dims().ambient() {
        return Err(Error::Shape(format!("point has {} coordinates, field acts on R^{}", p.len(), h.dims().ambient())));
    }
    min_tangential_laplacian(&h.hessian(&p), &h.gradient(&p), n)
}

/// A region of `ℝⁿ⁺ᵐ` to certify over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    /// `{(x, a(x) + w) : |x| <= x_radius, inner <= |w| <= outer}`.
    Tube {
        axis: QuadraticMap,
        x_radius: f64,
        inner: f64,
        outer: f64,
    },
    /// Euclidean ball in `ℝⁿ⁺ᵐ`.
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    /// `{|x| <= x_radius, |z| <= z_radius}`.
    pub fn cylinder(n: usize, m: usize, x_radius: f64, z_radius: f64) -> Self {
        Self::Tube {
            axis: QuadraticMap::zero(n, m),
            x_radius,
            inner: 0.0,
            outer: z_radius,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Tube { x_radius, inner, outer, .. } => {
                if !(*x_radius > 0.0 && *outer > 0.0 && *inner >= 0.0 && inner <= outer) {
                    return Err(invalid("region", "tube radii must satisfy 0 <= inner <= outer, x_radius > 0"));
                }
            }
            Self::Ball { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(invalid("region", "ball radius must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Lattice spacings and quasi-random sample count; everything needed to
/// reproduce the sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    /// Spacing in `x` (tubes) or in every coordinate (balls).
    pub hx: f64,
    /// Spacing in the tube offset `w`; unused for balls.
    pub hz: f64,
    pub quasi_random: usize,
    pub seed: u64,
}

impl SamplingSpec {
    /// `hx = 2/(N−1)` for the default lattice of dimension `n`, `hz` one
    /// eighth of the tube's outer radius.
    pub fn standard(region: &Region, n: usize, seed: u64) -> Self {
        let hx = 2.0 / (crate::grid::default_points_per_axis(n) - 1) as f64;
        let hz = match region {
            Region::Tube { outer, .. } => outer / 8.0,
            Region::Ball { radius, .. } => radius / 4.0,
        };
        Self {
            hx,
            hz,
            quasi_random: DEFAULT_QUASI_RANDOM,
            seed,
        }
    }
}

/// The sample set: lattice points first, then quasi-random points.
pub fn sample_region(region: &Region, n: usize, m: usize, spec: &SamplingSpec) -> Result<(Vec<DVector<f64>>, usize)> {
    region.validate()?;
    if !(spec.hx > 0.0) || !(spec.hz > 0.0) {
        return Err(invalid("sampling", "spacings must be positive"));
    }
    let k = n + m;
    let mut pts = Vec::new();
    let mut halton = Halton::new(k, spec.seed);
    let max_tries = 1000 * spec.quasi_random.max(1);
    match region {
        Region::Tube {
            axis,
            x_radius,
            inner,
            outer,
        } => {
            if axis.n() != n || axis.m() != m {
                return Err(Error::Shape("tube axis dimensions differ from the field".into()));
            }
            let inner_ok = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>().sqrt() >= inner * (1.0 - 1e-12);
            let make = |x: &[f64], w: &[f64]| {
                let a = axis.eval(x);
                DVector::from_iterator(k, x.iter().copied().chain(a.iter().zip(w).map(|(a, w)| a + w)))
            };
            let ws: Vec<Vec<f64>> = ball_lattice(m, *outer, spec.hz).into_iter().filter(|w| inner_ok(w)).collect();
            for x in ball_lattice(n, *x_radius, spec.hx) {
                for w in &ws {
                    pts.push(make(&x, w));
                }
            }
            let lattice = pts.len();
            let mut tries = 0;
            while pts.len() - lattice < spec.quasi_random && tries < max_tries {
                tries += 1;
                let u = halton.next_point();
                let x: Vec<f64> = u[..n].iter().map(|v| x_radius * (2.0 * v - 1.0)).collect();
                let w: Vec<f64> = u[n..].iter().map(|v| outer * (2.0 * v - 1.0)).collect();
                let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if crate::grid::norm(&x) <= *x_radius && wn <= *outer && inner_ok(&w) {
                    pts.push(make(&x, &w));
                }
            }
            Ok((pts, lattice))
        }
        Region::Ball { center, radius } => {
            if center.len() != k {
                return Err(Error::Shape(format!("ball centre has {} coordinates, expected {k}", center.len())));
            }
            let c = DVector::from_column_slice(center);
            for d in ball_lattice(k, *radius, spec.hx) {
                pts.push(&c + DVector::from_vec(d));
            }
            let lattice = pts.len();
            let mut tries = 0;
            while pts.len() - lattice < spec.quasi_random && tries < max_tries {
                tries += 1;
                let d: Vec<f64> = halton.next_point().iter().map(|v| radius * (2.0 * v - 1.0)).collect();
                if crate::grid::norm(&d) <= *radius {
                    pts.push(&c + DVector::from_vec(d));
                }
            }
            Ok((pts, lattice))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// No margin is clearly negative but some are within tolerance of zero.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub point: Vec<f64>,
    pub margin: f64,
    pub tol: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRecord {
    pub spec: SamplingSpec,
    pub lattice_points: usize,
    pub quasi_random_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCertificate {
    pub verdict: Verdict,
    pub min_margin: f64,
    pub retained: usize,
    pub excluded_count: usize,
    pub excluded_tube: usize,
    pub excluded_degenerate: usize,
    /// Smallest `margin − tol` first.
    pub worst: Vec<SampleRecord>,
    pub field: FieldDescriptor,
    pub region: Region,
    pub sampling: SamplingRecord,
}

enum Outcome {
    Tube,
    Degenerate,
    Kept(SampleRecord),
}

fn evaluate(h: &dyn ScalarField, p: &DVector<f64>, n: usize) -> Outcome {
    if h.excluded(p) {
        return Outcome::Tube;
    }
    let grad = h.gradient(p);
    let hess = h.hessian(p);
    if !grad.iter().chain(hess.as_matrix().iter()).all(|v| v.is_finite()) {
        return Outcome::Degenerate;
    }
    if grad.norm() < grad_tol(&hess) {
        return Outcome::Degenerate;
    }
    match min_tangential_laplacian(&hess, &grad, n) {
        Ok(margin) => Outcome::Kept(SampleRecord {
            point: p.iter().copied().collect(),
            margin,
            tol: 1e-9 * (1.0 + hess.frobenius_norm()) + h.margin_slack(p),
            grad_norm: grad.norm(),
        }),
        Err(_) => Outcome::Degenerate,
    }
}

/// Certifies the comparison condition at every sample of `region`.
///
/// Samples are evaluated in parallel; the reduction runs in sample order, so
/// the certificate does not depend on the thread count.
pub fn certify_region(h: &dyn ScalarField, region: &Region, n: usize, spec: &SamplingSpec) -> Result<ComparisonCertificate> {
    let dims = h.dims();
    if n != dims.n {
        return Err(invalid("n", format!("field has n = {}, asked for {n}-planes", dims.n)));
    }
    let (pts, lattice) = sample_region(region, dims.n, dims.m, spec)?;
    let sampling = SamplingRecord {
        spec: *spec,
        lattice_points: lattice,
        quasi_random_points: pts.len() - lattice,
    };
    let outcomes: Vec<Outcome> = pts.par_iter().map(|p| evaluate(h, p, n)).collect();
    let (mut tube, mut degenerate) = (0, 0);
    let mut kept = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Tube => tube += 1,
            Outcome::Degenerate => degenerate += 1,
            Outcome::Kept(r) => kept.push(r),
        }
    }
    let excluded = tube + degenerate;
    if kept.is_empty() {
        return Err(Error::EmptySampleSet { excluded });
    }
    let min_margin = kept.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let verdict = if kept.iter().all(|r| r.margin > r.tol) {
        Verdict::Pass
    } else if kept.iter().any(|r| r.margin < -r.tol) {
        Verdict::Fail
    } else {
        Verdict::Degenerate
    };
    kept.sort_by(|a, b| (a.margin - a.tol).total_cmp(&(b.margin - b.tol)));
    let retained = kept.len();
    kept.truncate(WORST_KEPT);
    Ok(ComparisonCertificate {
        verdict,
        min_margin,
        retained,
        excluded_count: excluded,
        excluded_tube: tube,
        excluded_degenerate: degenerate,
        worst: kept,
        field: h.descriptor(),
        region: region.clone(),
        sampling,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProbe {
    pub eps: f64,
    pub verdict: Option<Verdict>,
    pub min_margin: Option<f64>,
}

/// Result of a log-scale bisection for the largest passing `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    /// Largest probed `eps` that passed (`None` if even `lo` failed).
    pub eps_star: Option<f64>,
    /// Smallest probed `eps` that did not pass (`None` if `hi` passed).
    pub eps_fail: Option<f64>,
    pub probes: Vec<ThresholdProbe>,
}

/// Bisects `[lo, hi]` in `log eps` for the pass/fail transition of `certify`,
/// assuming certification passes below a threshold and fails above it.
/// Errors from `certify` (invalid parameters, empty sample sets) count as
/// "not passing".
pub fn bisect_threshold(
    lo: f64,
    hi: f64,
    steps: usize,
    certify: impl Fn(f64) -> Result<ComparisonCertificate>,
) -> Result<ThresholdSearch> {
    if !(lo > 0.0 && hi > lo) {
        return Err(invalid("bracket", format!("need 0 < lo < hi, got [{lo}, {hi}]")));
    }
    let mut probes = Vec::new();
    let mut probe = |eps: f64| {
        let c = certify(eps).ok();
        let pass = c.as_ref().is_some_and(|c| c.verdict == Verdict::Pass);
        probes.push(ThresholdProbe {
            eps,
            verdict: c.as_ref().map(|c| c.verdict),
            min_margin: c.map(|c| c.min_margin),
        });
        pass
    };
    if !probe(lo) {
        return Ok(ThresholdSearch {
            eps_star: None,
            eps_fail: Some(lo),
            probes,
        });
    }
    if probe(hi) {
        return Ok(ThresholdSearch {
            eps_star: Some(hi),
            eps_fail: None,
            probes,
        });
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..steps {
        let mid = (a * b).sqrt();
        if probe(mid) {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(ThresholdSearch {
        eps_star: Some(a),
        eps_fail: Some(b),
        probes,
    })
}

pub(crate) fn certify_ball(h: &dyn ScalarField, center: &DVector<f64>, radius: f64, spacing: f64, quasi: usize, seed: u64) -> Result<ComparisonCertificate> {
    let region = Region::Ball {
        center: center.iter().copied().collect(),
        radius,
    };
    let spec = SamplingSpec {
        hx: spacing,
        hz: spacing,
        quasi_random: quasi,
        seed,
    };
    certify_region(h, &region, h.dims().n, &spec)
}
