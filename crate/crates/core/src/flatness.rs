//! Flatness measurements on grid maps: oscillation, affine and harmonic
//! quadratic fits, Harnack decay, improvement-of-flatness steps and density
//! ratios.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{area_integrand, Gradient};
use crate::grid::{norm, GridMap};
use crate::interp::cubic_jet;
use crate::maps::{fit_affine, fit_harmonic_quadratic, AffineMap, QuadraticMap};

/// Relative allowance when checking `sup |u − l| <= eps` preconditions.
const PRECONDITION_SLACK: f64 = 1e-9;

/// Smallest enclosing ball of a point set: `(centre, radius)`.
///
/// Move-to-front Welzl iteration over the points in the given order; the
/// recursion depth is bounded by the support size, so large sets are fine.
pub fn min_enclosing_ball(points: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let Some(first) = points.first() else {
        return (Vec::new(), 0.0);
    };
    let dim = first.len();
    let mut pts: Vec<DVector<f64>> = points.iter().map(|p| DVector::from_column_slice(p)).collect();
    let end = pts.len();
    let ball = mtf(&mut pts, end, &mut Vec::new(), dim);
    (ball.0.iter().copied().collect(), ball.1)
}

type Ball = (DVector<f64>, f64);

fn inside(ball: &Ball, p: &DVector<f64>) -> bool {
    (p - &ball.0).norm() <= ball.1 * (1.0 + 1e-12) + 1e-14
}

fn mtf(pts: &mut Vec<DVector<f64>>, end: usize, support: &mut Vec<DVector<f64>>, dim: usize) -> Ball {
    let mut ball = circumball(support, dim);
    if support.len() == dim + 1 {
        return ball;
    }
    let mut i = 0;
    while i < end {
        if !inside(&ball, &pts[i]) {
            support.push(pts[i].clone());
            ball = mtf(pts, i, support, dim);
            support.pop();
            let p = pts.remove(i);
            pts.insert(0, p);
        }
        i += 1;
    }
    ball
}

// Smallest ball with all support points on its boundary.
fn circumball(support: &[DVector<f64>], dim: usize) -> Ball {
    match support.len() {
        0 => (DVector::zeros(dim), -1.0),
        1 => (support[0].clone(), 0.0),
        k => {
            let p0 = &support[0];
            let d: Vec<DVector<f64>> = support[1..].iter().map(|p| p - p0).collect();
            let gram = DMatrix::from_fn(k - 1, k - 1, |i, j| 2.0 * d[i].dot(&d[j]));
            let rhs = DVector::from_fn(k - 1, |i, _| d[i].norm_squared());
            let lambda = gram
                .clone()
                .lu()
                .solve(&rhs)
                .filter(|l| l.iter().all(|v| v.is_finite()))
                .unwrap_or_else(|| gram.pseudo_inverse(1e-14).map(|g| g * &rhs).unwrap_or_else(|_| DVector::zeros(k - 1)));
            let mut c = p0.clone();
            for (l, di) in lambda.iter().zip(&d) {
                c += di * *l;
            }
            let r = support.iter().map(|p| (p - &c).norm()).fold(0.0, f64::max);
            (c, r)
        }
    }
}

/// Radius of the smallest ball in `ℝᵐ` containing `{u(x) : |x| <= r}`.
pub fn oscillation(u: &GridMap, r: f64) -> f64 {
    let pts: Vec<Vec<f64>> = u.indices_within(r).into_iter().map(|i| u.value(i).to_vec()).collect();
    min_enclosing_ball(&pts).1.max(0.0)
}

/// `u − f` on the same lattice and mask.
pub fn subtract(u: &GridMap, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<GridMap> {
    u.map(|x, v| v.iter().zip(f(x)).map(|(a, b)| a - b).collect())
}

/// `sup |u − f|` over the mask points with `|x| <= r`.
pub fn sup_deviation(u: &GridMap, r: f64, f: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    u.indices_within(r)
        .into_iter()
        .map(|i| {
            let fx = f(&u.position(i));
            norm(&u.value(i).iter().zip(fx).map(|(a, b)| a - b).collect::<Vec<_>>())
        })
        .fold(0.0, f64::max)
}

fn samples_within(u: &GridMap, r: f64) -> (Vec<Vec<f64>>, Vec<&[f64]>) {
    let idx = u.indices_within(r);
    (idx.iter().map(|&i| u.position(i)).collect(), idx.iter().map(|&i| u.value(i)).collect())
}

/// Componentwise least-squares affine fit over `B_r ∩ lattice`.
pub fn best_affine_fit(u: &GridMap, r: f64) -> Result<AffineMap> {
    let (pts, vals) = samples_within(u, r);
    fit_affine(&pts, &vals)
}

/// Least-squares fit by harmonic quadratics over `B_r ∩ lattice`.
pub fn best_harmonic_fit(u: &GridMap, r: f64) -> Result<QuadraticMap> {
    let (pts, vals) = samples_within(u, r);
    fit_harmonic_quadratic(&pts, &vals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackDecay {
    pub theta: f64,
    pub osc_full: f64,
    pub osc_half: f64,
}

/// `θ = 1 − osc_{B_½}(u − l)/ε`, after checking `osc_{B_1}(u − l) <= ε`.
pub fn harnack_decay(u: &GridMap, l: &AffineMap, eps: f64) -> Result<HarnackDecay> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    let w = subtract(u, |x| l.eval(x))?;
    let osc_full = oscillation(&w, u.mask().radius());
    if osc_full > eps * (1.0 + PRECONDITION_SLACK) {
        return Err(Error::FlatnessViolated { measured: osc_full, eps });
    }
    let osc_half = oscillation(&w, 0.5 * u.mask().radius());
    Ok(HarnackDecay {
        theta: 1.0 - osc_half / eps,
        osc_full,
        osc_half,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessStep {
    pub approx: AffineMap,
    pub new_eps: f64,
    /// `new_eps / (eps η)`; the prediction is `<= 1/2`.
    pub ratio: f64,
}

/// Refits on `B_η` after checking `sup_{B_1} |u − l| <= eps`.
pub fn improve_flatness_step(u: &GridMap, l: &AffineMap, eps: f64, eta: f64) -> Result<FlatnessStep> {
    check_scales(eps, eta)?;
    let measured = sup_deviation(u, u.mask().radius(), |x| l.eval(x));
    if measured > eps * (1.0 + PRECONDITION_SLACK) {
        return Err(Error::FlatnessViolated { measured, eps });
    }
    let approx = best_affine_fit(u, eta)?;
    let new_eps = sup_deviation(u, eta, |x| approx.eval(x));
    Ok(FlatnessStep {
        ratio: new_eps / (eps * eta),
        approx,
        new_eps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFlatnessStep {
    pub approx: QuadraticMap,
    pub new_eps: f64,
    /// `new_eps / (eps η²)`; the prediction is `<= 1/2`.
    pub ratio: f64,
}

/// Harmonic quadratic refit on `B_η` after checking `sup_{B_1} |u − q| <= eps`
/// and that the quadratic coefficients of `q` are at most `eps^β`.
pub fn improve_flatness_quadratic(u: &GridMap, q: &QuadraticMap, eps: f64, eta: f64, beta: f64) -> Result<QuadraticFlatnessStep> {
    check_scales(eps, eta)?;
    if !(beta > 0.5 && beta < 1.0) {
        return Err(invalid("beta", format!("{beta} is outside (1/2, 1)")));
    }
    let coef = q.max_quadratic_coefficient();
    if coef > eps.powf(beta) * (1.0 + PRECONDITION_SLACK) {
        return Err(Error::PreconditionUnmet(format!("quadratic coefficient {coef:e} exceeds eps^beta = {:e}", eps.powf(beta))));
    }
    let measured = sup_deviation(u, u.mask().radius(), |x| q.eval(x));
    if measured > eps * (1.0 + PRECONDITION_SLACK) {
        return Err(Error::FlatnessViolated { measured, eps });
    }
    let approx = best_harmonic_fit(u, eta)?;
    let new_eps = sup_deviation(u, eta, |x| approx.eval(x));
    Ok(QuadraticFlatnessStep {
        ratio: new_eps / (eps * eta * eta),
        approx,
        new_eps,
    })
}

fn check_scales(eps: f64, eta: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("eps", "must be positive"));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid("eta", format!("{eta} is outside (0, 1)")));
    }
    Ok(())
}

/// `ℋⁿ(B₁ⁿ)`.
pub fn unit_ball_volume(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * PI / n as f64,
    }
}

/// Sub-cells per axis in [`density_ratio`].
pub const DENSITY_SUBCELLS: usize = 4;

/// `ℋⁿ(Γ ∩ B_r(X₀)) / (ω_n rⁿ)` with `X₀ = (x₀, u(x₀))`.
///
/// Each lattice cell is split into `4ⁿ` sub-cells; a sub-cell counts when the
/// graph of the first-order Taylor expansion at the cell centre passes
/// through the ball at the sub-cell centre, weighted by `F(Du) (h/4)ⁿ`.
pub fn density_ratio(u: &GridMap, x0: &[f64], r: f64) -> Result<f64> {
    let (n, m) = (u.dims().n, u.dims().m);
    if x0.len() != n {
        return Err(Error::Shape(format!("centre has {} coordinates, expected {n}", x0.len())));
    }
    let h = u.spacing();
    if r < 4.0 * h {
        return Err(Error::ScaleTooFine { radius: r, min: 4.0 * h });
    }
    let z0 = match cubic_jet(u, x0) {
        Ok(j) => j.value,
        Err(_) => u.value(u.lattice().nearest(x0)).to_vec(),
    };
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x0", "centre lies outside the mask"));
    }
    let s = DENSITY_SUBCELLS;
    let sub = h / s as f64;
    let offsets: Vec<Vec<f64>> = (0..s.pow(n as u32))
        .map(|k| {
            let mut rem = k;
            (0..n)
                .map(|_| {
                    let i = rem % s;
                    rem /= s;
                    -0.5 * h + (i as f64 + 0.5) * sub
                })
                .collect()
        })
        .collect();
    let reach = r + h * (n as f64).sqrt();
    let mut area = 0.0;
    for idx in u.mask_indices() {
        let x = u.position(idx);
        let dx: f64 = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dx > reach {
            continue;
        }
        let Ok((du, _)) = u.gradient_at(idx) else {
            continue;
        };
        let f = area_integrand(&du);
        let v = u.value(idx);
        let mut count = 0usize;
        for off in &offsets {
            let mut d2 = 0.0;
            for i in 0..n {
                let c = x[i] + off[i] - x0[i];
                d2 += c * c;
            }
            for a in 0..m {
                let za = v[a] + (0..n).map(|i| du.entry(i, a) * off[i]).sum::<f64>();
                d2 += (za - z0[a]) * (za - z0[a]);
            }
            if d2 <= r * r {
                count += 1;
            }
        }
        area += f * count as f64 * sub.powi(n as i32);
    }
    Ok(area / (unit_ball_volume(n) * r.powi(n as i32)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackLevel {
    pub c: f64,
    /// `|{w > 1 − Cη}| / |B₁|` on the lattice.
    pub measure_fraction: f64,
    /// `C' = √(8C)`: `{w > 1 − Cη} ⊂ {|ũ − ξ| <= C'√η}` whenever `|ũ| <= 1`.
    pub c_prime: f64,
    /// Fraction of `{w > 1 − Cη}` lying in `{|ũ − ξ| <= C'√η}`.
    pub inclusion_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackMeasureReport {
    pub eta_small: f64,
    pub near_extremal_point: Vec<f64>,
    pub near_extremal_distance: f64,
    pub levels: Vec<HarnackLevel>,
}

/// Measures the sets `{w > 1 − Cη}` for `w = ½|ũ + ξ|`, `ũ = (u − l)/ε`,
/// over the sweep `cs`.
pub fn harnack_measure_experiment(
    u: &GridMap,
    l: &AffineMap,
    eps: f64,
    xi: &[f64],
    eta_small: f64,
    cs: &[f64],
) -> Result<HarnackMeasureReport> {
    let m = u.dims().m;
    if xi.len() != m || (norm(xi) - 1.0).abs() > 1e-12 {
        return Err(invalid("xi", "must be a unit vector in R^m"));
    }
    if !(eps > 0.0) || !(eta_small > 0.0) {
        return Err(invalid("eta_small", "eps and eta_small must be positive"));
    }
    if cs.iter().any(|c| !(*c > 0.0)) {
        return Err(invalid("c", "sweep values must be positive"));
    }
    let idx = u.mask_indices();
    let scaled: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| {
            let lx = l.eval(&u.position(i));
            u.value(i).iter().zip(lx).map(|(a, b)| (a - b) / eps).collect()
        })
        .collect();
    let dist_xi = |v: &[f64]| norm(&v.iter().zip(xi).map(|(a, b)| a - b).collect::<Vec<_>>());
    let half = 0.5 * u.mask().radius();
    let near = idx
        .iter()
        .zip(&scaled)
        .filter(|(&i, _)| norm(&u.position(i)) <= half * (1.0 + 1e-12))
        .map(|(&i, v)| (i, dist_xi(v)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let (x0, d0) = match near {
        Some((i, d)) if d <= eta_small => (u.position(i), d),
        Some((_, d)) => {
            return Err(Error::PreconditionUnmet(format!(
                "no point of B_1/2 has |u~ - xi| <= {eta_small:e} (closest {d:e})"
            )))
        }
        None => return Err(Error::PreconditionUnmet("empty half ball".into())),
    };
    let w: Vec<f64> = scaled
        .iter()
        .map(|v| 0.5 * norm(&v.iter().zip(xi).map(|(a, b)| a + b).collect::<Vec<_>>()))
        .collect();
    let levels = cs
        .iter()
        .map(|&c| {
            let c_prime = (8.0 * c).sqrt();
            let level = 1.0 - c * eta_small;
            let hits: Vec<usize> = (0..w.len()).filter(|&k| w[k] > level).collect();
            let inside = hits.iter().filter(|&&k| dist_xi(&scaled[k]) <= c_prime * eta_small.sqrt() * (1.0 + 1e-12)).count();
            HarnackLevel {
                c,
                measure_fraction: hits.len() as f64 / w.len() as f64,
                c_prime,
                inclusion_fraction: if hits.is_empty() { 1.0 } else { inside as f64 / hits.len() as f64 },
            }
        })
        .collect();
    Ok(HarnackMeasureReport {
        eta_small,
        near_extremal_point: x0,
        near_extremal_distance: d0,
        levels,
    })
}

/// Slope of the fitted approximant; unchanged by the rescalings `u(ηy)/η`.
pub fn slope(l: &AffineMap) -> &Gradient {
    &l.a
}
