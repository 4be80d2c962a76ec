//! Desk-scale solvers on the ball lattice: the Dirichlet problem for the
//! minimal surface system, the discrete Laplace equation, and the
//! Lawson–Osserman cone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{area_integrand, ellipticity_upper, Dims, SystemCoefficients, MAX_M, MAX_N};
use crate::grid::{norm, GridMap};
use crate::maps::fit_affine;

/// Boundary data: evaluated once at every boundary lattice point.
pub type BoundaryFn<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

pub const DEFAULT_TOL_RES: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200_000;
const TAU_REFRESH: usize = 100;
const LAPLACE_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    /// Fixed step; `None` uses `h² / (4 n Λ̂)` re-estimated every 100 iterations.
    pub tau: Option<f64>,
    pub tol_res: f64,
    pub max_iter: usize,
    /// Record the discrete area every this many iterations (0 = never).
    pub monitor_every: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            tau: None,
            tol_res: DEFAULT_TOL_RES,
            max_iter: DEFAULT_MAX_ITER,
            monitor_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_sup_residual: f64,
    pub final_sup_residual: f64,
    pub converged: bool,
    pub tau: f64,
    /// `(iteration, discrete area)` samples when monitoring is on.
    pub area_trace: Vec<(usize, f64)>,
}

/// Solves the minimal surface system with Dirichlet data `g` on the unit ball
/// lattice with `points` points per axis.
///
/// The interior starts from the discrete harmonic extension of `g` and then
/// follows the explicit flow `u ← u + τ R(u)`, `R` the nondivergence
/// residual, until `sup |R| <= tol_res`. Running out of iterations is not an
/// error: the report says `converged: false` and the partial grid is returned.
pub fn solve_dirichlet(dims: Dims, points: usize, g: BoundaryFn<'_>, params: &SolveParams) -> Result<(GridMap, SolveReport)> {
    let mut u = boundary_grid(dims, points, g)?;
    solve_dirichlet_on(&mut u, params).map(|r| (u, r))
}

/// Same as [`solve_dirichlet`] but keeps the boundary values already stored
/// in `u` and overwrites its interior.
pub fn solve_dirichlet_on(u: &mut GridMap, params: &SolveParams) -> Result<SolveReport> {
    check_params(params)?;
    laplace_in_place(u, 1e-2 * params.tol_res.min(1e-8))?;
    run_flow(u, params)
}

/// Runs the flow from the interior values already in `u` (a warm start).
pub fn solve_dirichlet_warm(u: &mut GridMap, params: &SolveParams) -> Result<SolveReport> {
    check_params(params)?;
    if u.interior_indices().iter().any(|&i| u.value(i).iter().any(|v| !v.is_finite())) {
        return Err(invalid("u", "warm start needs finite interior values"));
    }
    run_flow(u, params)
}

fn check_params(params: &SolveParams) -> Result<()> {
    if !(params.tol_res > 0.0) || params.max_iter == 0 {
        return Err(invalid("tol_res", "tolerance and iteration cap must be positive"));
    }
    Ok(())
}

fn run_flow(u: &mut GridMap, params: &SolveParams) -> Result<SolveReport> {
    let dims = u.dims();
    let (n, m) = (dims.n, dims.m);
    let h = u.spacing();
    let boundary = u.boundary_indices();
    let sup_g = boundary.iter().map(|&i| norm(u.value(i))).fold(0.0, f64::max);
    let bound = 10.0 * (1.0 + sup_g);
    let interior = u.interior_indices();
    let tau_max = |u: &GridMap| h * h / (4.0 * n as f64 * ellipticity(u, &interior));
    let mut tau = match params.tau {
        Some(t) => {
            let limit = tau_max(u);
            if !(t > 0.0) || t > limit {
                return Err(invalid("tau", format!("step {t:e} outside (0, {limit:e}]")));
            }
            t
        }
        None => tau_max(u),
    };

    let mut area_trace = Vec::new();
    let mut residuals = vec![[0.0; MAX_M]; interior.len()];
    let mut initial = f64::NAN;
    let mut iteration = 0;
    loop {
        if params.monitor_every > 0 && iteration % params.monitor_every == 0 {
            area_trace.push((iteration, discrete_area(u)));
        }
        let sup = evaluate_residuals(u, &interior, &mut residuals);
        if iteration == 0 {
            initial = sup;
        }
        if !sup.is_finite() {
            return Err(Error::Diverged {
                iteration,
                sup: f64::INFINITY,
                bound,
            });
        }
        if sup <= params.tol_res || iteration >= params.max_iter {
            if params.monitor_every > 0 && iteration % params.monitor_every != 0 {
                area_trace.push((iteration, discrete_area(u)));
            }
            return Ok(SolveReport {
                iterations: iteration,
                initial_sup_residual: initial,
                final_sup_residual: sup,
                converged: sup <= params.tol_res,
                tau,
                area_trace,
            });
        }
        let values = u.raw_values_mut();
        let mut sup_u = 0.0f64;
        for (&idx, r) in interior.iter().zip(&residuals) {
            let mut s = 0.0;
            for a in 0..m {
                let v = &mut values[idx * m + a];
                *v += tau * r[a];
                s += *v * *v;
            }
            sup_u = sup_u.max(s);
        }
        let sup_u = sup_u.sqrt();
        iteration += 1;
        if !(sup_u <= bound) {
            return Err(Error::Diverged {
                iteration,
                sup: sup_u,
                bound,
            });
        }
        if params.tau.is_none() && iteration % TAU_REFRESH == 0 {
            tau = tau_max(u);
        }
    }
}

// Central-difference residual kernel on the raw value array, monomorphized
// over (n, m) so the small loops unroll.
#[derive(Clone, Copy)]
struct Kernel {
    strides: [usize; MAX_N],
    inv_2h: f64,
    inv_h2: f64,
    inv_4h2: f64,
}

impl Kernel {
    fn new(u: &GridMap) -> Self {
        let h = u.spacing();
        let mut strides = [0; MAX_N];
        for (a, s) in strides.iter_mut().enumerate().take(u.dims().n) {
            *s = u.lattice().stride(a);
        }
        Self {
            strides,
            inv_2h: 0.5 / h,
            inv_h2: 1.0 / (h * h),
            inv_4h2: 0.25 / (h * h),
        }
    }

    #[inline(always)]
    fn residual<const N: usize, const M: usize>(&self, v: &[f64], idx: usize, out: &mut [f64; MAX_M]) -> f64 {
        let mut du = [[0.0; MAX_M]; MAX_N];
        let mut d2 = [[[0.0; N]; N]; M];
        for i in 0..N {
            let si = self.strides[i];
            for a in 0..M {
                let c = v[idx * M + a];
                let p = v[(idx + si) * M + a];
                let q = v[(idx - si) * M + a];
                du[i][a] = (p - q) * self.inv_2h;
                d2[a][i][i] = (p - 2.0 * c + q) * self.inv_h2;
            }
            for j in (i + 1)..N {
                let sj = self.strides[j];
                for a in 0..M {
                    let x = v[(idx + si + sj) * M + a] - v[(idx + si - sj) * M + a] - v[(idx - si + sj) * M + a]
                        + v[(idx - si - sj) * M + a];
                    d2[a][i][j] = x * self.inv_4h2;
                }
            }
        }
        let c = SystemCoefficients::new(&du, N, M);
        let mut traced = [0.0; M];
        for (beta, t) in traced.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..N {
                s += c.k[i][i] * d2[beta][i][i];
                for j in (i + 1)..N {
                    s += 2.0 * c.k[i][j] * d2[beta][i][j];
                }
            }
            *t = s;
        }
        let mut norm2 = 0.0;
        for (alpha, o) in out.iter_mut().enumerate().take(M) {
            let mut s = 0.0;
            for (beta, t) in traced.iter().enumerate() {
                s += c.g[alpha][beta] * t;
            }
            *o = c.area * s;
            norm2 += *o * *o;
        }
        norm2
    }

    fn sweep<const N: usize, const M: usize>(&self, v: &[f64], interior: &[usize], out: &mut [[f64; MAX_M]]) -> f64 {
        out.par_iter_mut()
            .zip(interior.par_iter())
            .with_min_len(1024)
            .map(|(r, &idx)| self.residual::<N, M>(v, idx, r))
            .reduce(|| 0.0, f64::max)
    }
}

fn evaluate_residuals(u: &GridMap, interior: &[usize], out: &mut [[f64; MAX_M]]) -> f64 {
    let k = Kernel::new(u);
    let v = u.raw_values();
    let sup2 = match (u.dims().n, u.dims().m) {
        (2, 1) => k.sweep::<2, 1>(v, interior, out),
        (2, 2) => k.sweep::<2, 2>(v, interior, out),
        (2, 3) => k.sweep::<2, 3>(v, interior, out),
        (3, 1) => k.sweep::<3, 1>(v, interior, out),
        (3, 2) => k.sweep::<3, 2>(v, interior, out),
        (3, 3) => k.sweep::<3, 3>(v, interior, out),
        (4, 1) => k.sweep::<4, 1>(v, interior, out),
        (4, 2) => k.sweep::<4, 2>(v, interior, out),
        (4, 3) => k.sweep::<4, 3>(v, interior, out),
        (n, m) => unreachable!("dimensions n = {n}, m = {m} rejected by Dims"),
    };
    sup2.sqrt()
}

fn ellipticity(u: &GridMap, interior: &[usize]) -> f64 {
    let (n, m) = (u.dims().n, u.dims().m);
    interior
        .par_iter()
        .map(|&idx| {
            let (du, _) = u.central_jet(idx).expect("interior point");
            ellipticity_upper(&du, n, m)
        })
        .reduce(|| 1.0, f64::max)
}

/// `Σ F(Du) hⁿ` over the mask points where a first difference exists.
pub fn discrete_area(u: &GridMap) -> f64 {
    let hn = u.spacing().powi(u.dims().n as i32);
    u.mask_indices()
        .into_iter()
        .filter_map(|idx| u.gradient_at(idx).ok())
        .map(|(g, _)| area_integrand(&g) * hn)
        .sum()
}

/// Grid on the closed unit ball holding `g` at boundary points and zero inside.
pub fn boundary_grid(dims: Dims, points: usize, g: BoundaryFn<'_>) -> Result<GridMap> {
    let probe = GridMap::from_fn(dims, points, |_| vec![0.0; dims.m])?;
    let mut u = probe;
    for idx in u.boundary_indices() {
        let v = g(&u.position(idx));
        if v.len() != dims.m {
            return Err(Error::Shape(format!("boundary data has {} components, expected {}", v.len(), dims.m)));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(invalid("g", "boundary data must be finite"));
        }
        u.value_mut(idx).copy_from_slice(&v);
    }
    Ok(u)
}

/// Discrete harmonic extension of `g` with the `(2n+1)`-point Laplacian;
/// `sup |Δ_h u| <= tol` at interior points.
pub fn solve_laplace(dims: Dims, points: usize, g: BoundaryFn<'_>, tol: f64) -> Result<GridMap> {
    let mut u = boundary_grid(dims, points, g)?;
    laplace_in_place(&mut u, tol)?;
    Ok(u)
}

/// Replaces the interior values of `u` by the discrete harmonic extension of
/// its boundary values. Returns the number of conjugate-gradient iterations.
///
/// The best affine fit of the boundary data is subtracted first and added
/// back afterwards, so affine data is reproduced to rounding.
pub fn laplace_in_place(u: &mut GridMap, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let dims = u.dims();
    let (n, m) = (dims.n, dims.m);
    let h = u.spacing();
    let boundary = u.boundary_indices();
    let interior = u.interior_indices();
    let lift = {
        let pts: Vec<Vec<f64>> = boundary.iter().map(|&i| u.position(i)).collect();
        let vals: Vec<&[f64]> = boundary.iter().map(|&i| u.value(i)).collect();
        fit_affine(&pts, &vals)?
    };

    let lat = *u.lattice();
    let mut slot = vec![usize::MAX; lat.len()];
    for (k, &idx) in interior.iter().enumerate() {
        slot[idx] = k;
    }
    // neighbours of each unknown: Ok(slot) for interior, Err(index) for boundary
    let neighbours: Vec<Vec<std::result::Result<usize, usize>>> = interior
        .iter()
        .map(|&idx| {
            (0..n)
                .flat_map(|a| [idx + lat.stride(a), idx - lat.stride(a)])
                .map(|j| if slot[j] != usize::MAX { Ok(slot[j]) } else { Err(j) })
                .collect()
        })
        .collect();
    let diag = 2.0 * n as f64;
    let apply = |x: &[f64], out: &mut [f64]| {
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            let mut s = diag * x[k];
            for nb in &neighbours[k] {
                if let Ok(j) = nb {
                    s -= x[*j];
                }
            }
            *o = s;
        });
    };

    let lifted: Vec<Vec<f64>> = boundary.iter().map(|&i| lift.eval(&u.position(i))).collect();
    let mut boundary_offset = vec![0.0; lat.len() * m];
    for (&i, l) in boundary.iter().zip(&lifted) {
        for a in 0..m {
            boundary_offset[i * m + a] = u.value(i)[a] - l[a];
        }
    }

    let scaled_tol = tol * h * h;
    let mut total_iters = 0;
    for a in 0..m {
        let rhs: Vec<f64> = neighbours
            .iter()
            .map(|nbs| {
                nbs.iter()
                    .filter_map(|nb| nb.err())
                    .map(|j| boundary_offset[j * m + a])
                    .sum()
            })
            .collect();
        let (x, iters) = conjugate_gradient(&apply, &rhs, scaled_tol)?;
        total_iters += iters;
        for (k, &idx) in interior.iter().enumerate() {
            let l = lift.eval(&u.position(idx))[a];
            u.value_mut(idx)[a] = x[k] + l;
        }
    }
    Ok(total_iters)
}

fn conjugate_gradient(apply: &impl Fn(&[f64], &mut [f64]), b: &[f64], tol: f64) -> Result<(Vec<f64>, usize)> {
    let len = b.len();
    let mut x = vec![0.0; len];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; len];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    for it in 0..LAPLACE_MAX_ITER {
        if sup(&r) <= tol {
            return Ok((x, it));
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rr / pap;
        for k in 0..len {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        // periodic true-residual refresh keeps the recursion honest
        if it % 50 == 49 {
            apply(&x, &mut ap);
            for k in 0..len {
                r[k] = b[k] - ap[k];
            }
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..len {
            p[k] = r[k] + beta * p[k];
        }
    }
    Err(Error::NotConverged {
        iterations: LAPLACE_MAX_ITER,
        residual: sup(&r),
    })
}

/// Sup over `B_r` of `|u − h|`, `h` the discrete harmonic function on `B_r`
/// with the boundary values of `u`.
pub fn harmonic_replacement_gap(u: &GridMap, r: f64) -> Result<f64> {
    let restricted = u.restrict(r)?;
    let h = harmonic_replacement(u, r)?;
    Ok(restricted.sup_distance(&h))
}

/// The discrete harmonic replacement of `u` on `B_r` (same lattice).
pub fn harmonic_replacement(u: &GridMap, r: f64) -> Result<GridMap> {
    let mut h = u.restrict(r)?;
    laplace_in_place(&mut h, 1e-12)?;
    Ok(h)
}

/// The Lawson–Osserman cone `u(x) = (√5/2) |x| η(x/|x|)` over `ℝ⁴ ≅ ℂ²`,
/// `η(z₁, z₂) = (|z₁|² − |z₂|², 2 z₁ z̄₂)` the Hopf map.
pub fn lawson_osserman(x: &[f64]) -> [f64; 3] {
    let r2 = x.iter().map(|v| v * v).sum::<f64>();
    if r2 == 0.0 {
        return [0.0; 3];
    }
    // η is quadratic, so |x| η(x/|x|) = η(x)/|x|.
    let scale = 5f64.sqrt() / 2.0 / r2.sqrt();
    let (a, b, c, d) = (x[0], x[1], x[2], x[3]);
    [
        scale * (a * a + b * b - c * c - d * d),
        scale * 2.0 * (a * c + b * d),
        scale * 2.0 * (b * c - a * d),
    ]
}

/// The Lawson–Osserman map sampled on the 4-dimensional unit ball lattice.
pub fn lawson_osserman_grid(points: usize) -> Result<GridMap> {
    GridMap::from_fn(Dims::new(4, 3)?, points, |x| lawson_osserman(x).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_matches_generic_residual() {
        for (n, m) in [(2, 1), (2, 3), (3, 2), (4, 3)] {
            let dims = Dims::new(n, m).unwrap();
            let u = GridMap::from_fn(dims, 11, |x| {
                (0..m).map(|a| (x[0] * (a + 1) as f64 + 0.3 * x[n - 1]).sin() + 0.2 * x[1] * x[1] * a as f64).collect()
            })
            .unwrap();
            let interior = u.interior_indices();
            let mut out = vec![[0.0; MAX_M]; interior.len()];
            evaluate_residuals(&u, &interior, &mut out);
            for (r, &i) in out.iter().zip(&interior) {
                let generic = crate::residual::residual_nondivergence(&u, i).unwrap();
                for a in 0..m {
                    assert!((r[a] - generic[a]).abs() <= 1e-10 * (1.0 + generic[a].abs()), "n={n} m={m}: {} vs {}", r[a], generic[a]);
                }
            }
        }
    }

    #[test]
    fn lawson_osserman_examples() {
        let s = 5f64.sqrt() / 2.0;
        let u = lawson_osserman(&[1.0, 0.0, 0.0, 0.0]);
        assert!((u[0] - s).abs() < 1e-15 && u[1] == 0.0 && u[2] == 0.0);
        assert_eq!(lawson_osserman(&[0.0; 4]), [0.0; 3]);
        let x = [0.3, -0.7, 0.2, 0.5];
        let ux = lawson_osserman(&x);
        let r = norm(&x);
        assert!((norm(&ux) - s * r).abs() < 1e-14);
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v).collect();
        let uy = lawson_osserman(&y);
        for k in 0..3 {
            assert!((uy[k] - 2.5 * ux[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn laplace_reproduces_affine_and_quadratic_harmonics() {
        let dims = Dims::new(2, 2).unwrap();
        let g = |x: &[f64]| vec![0.2 + x[0] - 0.5 * x[1], x[0] * x[0] - x[1] * x[1]];
        let u = solve_laplace(dims, 21, &g, 1e-12).unwrap();
        for idx in u.mask_indices() {
            let want = g(&u.position(idx));
            assert!((u.value(idx)[0] - want[0]).abs() < 1e-12);
            assert!((u.value(idx)[1] - want[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn dirichlet_affine_is_a_fixed_point() {
        let dims = Dims::new(2, 2).unwrap();
        let g = |x: &[f64]| vec![0.1 + 0.4 * x[0] - 0.3 * x[1], -0.2 + 0.6 * x[1]];
        let (u, report) = solve_dirichlet(dims, 21, &g, &SolveParams::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
        for idx in u.mask_indices() {
            let want = g(&u.position(idx));
            for a in 0..2 {
                assert!((u.value(idx)[a] - want[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiny_iteration_cap_reports_nonconvergence() {
        let dims = Dims::new(2, 1).unwrap();
        let g = |x: &[f64]| vec![0.5 * (x[0] * x[0] - x[1] * x[1]) + 0.3 * x[0] * x[0] * x[0]];
        let params = SolveParams {
            max_iter: 3,
            tol_res: 1e-14,
            ..SolveParams::default()
        };
        let (_, report) = solve_dirichlet(dims, 21, &g, &params).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 3);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let dims = Dims::new(2, 1).unwrap();
        let g = |x: &[f64]| vec![x[0] * x[1]];
        let params = SolveParams {
            tau: Some(1.0),
            ..SolveParams::default()
        };
        assert!(solve_dirichlet(dims, 21, &g, &params).is_err());
    }
}
