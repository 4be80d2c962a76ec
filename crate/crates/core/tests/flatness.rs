use msl_core::error::Error;
use msl_core::experiments::{flatness_trace, harnack_experiment, harnack_measure, rescale, saddle, solve_batch, ExperimentParams, FlatProblem};
use msl_core::flatness::{
    best_affine_fit, best_harmonic_fit, density_ratio, harnack_decay, improve_flatness_quadratic, improve_flatness_step, min_enclosing_ball,
    oscillation, unit_ball_volume,
};
use msl_core::geometry::{area_integrand, Dims, Gradient};
use msl_core::grid::GridMap;
use msl_core::maps::{AffineMap, QuadraticMap};
use msl_core::sampling::stream_rng;
use msl_core::solver::{lawson_osserman, lawson_osserman_grid, SolveParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Smallest ball containing `pts` whose center is the circumcenter of some
/// subset of at most `d + 1` points, by exhaustive search.
fn naive_enclosing_radius(pts: &[Vec<f64>]) -> f64 {
    let d = pts[0].len();
    let mut best = f64::INFINITY;
    let k = pts.len();
    let mut consider = |subset: &[usize]| {
        let Some(c) = circumcenter(pts, subset) else {
            return;
        };
        let r = pts.iter().map(|p| dist(p, &c)).fold(0.0, f64::max);
        best = best.min(r);
    };
    for i in 0..k {
        for j in i + 1..k {
            consider(&[i, j]);
            for l in j + 1..k {
                consider(&[i, j, l]);
                if d >= 3 {
                    for q in l + 1..k {
                        consider(&[i, j, l, q]);
                    }
                }
            }
        }
    }
    best
}

/// Center of the smallest sphere through the points, within their affine hull.
fn circumcenter(pts: &[Vec<f64>], subset: &[usize]) -> Option<Vec<f64>> {
    let p0 = DVector::from_column_slice(&pts[subset[0]]);
    let cols: Vec<DVector<f64>> = subset[1..].iter().map(|&i| DVector::from_column_slice(&pts[i]) - &p0).collect();
    let v = DMatrix::from_columns(&cols);
    let gram = v.transpose() * &v;
    let rhs = DVector::from_fn(cols.len(), |i, _| 0.5 * cols[i].norm_squared());
    let lam = gram.lu().solve(&rhs)?;
    let c = p0 + v * lam;
    Some(c.iter().copied().collect())
}

#[test]
fn enclosing_ball_matches_exhaustive_search() {
    let mut rng = stream_rng(31, 0);
    for t in 0..40 {
        let d = 2 + t % 2;
        let count = 5 + t % 12;
        let pts: Vec<Vec<f64>> = (0..count).map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let (center, r) = min_enclosing_ball(&pts);
        assert!(pts.iter().all(|p| dist(p, &center) <= r * (1.0 + 1e-12)));
        let naive = naive_enclosing_radius(&pts);
        assert!((r - naive).abs() <= 1e-9 * naive, "d={d}: {r} vs {naive}");
    }
}

#[test]
fn oscillation_of_scalar_map_is_half_the_range() {
    let u = GridMap::from_fn(Dims::new(2, 1).unwrap(), 41, |x| vec![(3.0 * x[0]).sin() + x[1] * x[1]]).unwrap();
    let vals: Vec<f64> = u.indices_within(0.5).into_iter().map(|i| u.value(i)[0]).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((oscillation(&u, 0.5) - 0.5 * (hi - lo)).abs() < 1e-14);
}

#[test]
fn affine_fit_matches_normal_equations() {
    let dims = Dims::new(3, 2).unwrap();
    let u = GridMap::from_fn(dims, 21, |x| vec![(x[0] + 2.0 * x[1]).sin(), x[2] * x[2] - x[0] * x[1] + 0.3]).unwrap();
    let r = 0.6;
    let fit = best_affine_fit(&u, r).unwrap();
    let idx = u.indices_within(r);
    let design = DMatrix::from_fn(idx.len(), 4, |row, col| if col == 0 { 1.0 } else { u.position(idx[row])[col - 1] });
    for al in 0..2 {
        let rhs = DVector::from_fn(idx.len(), |row, _| u.value(idx[row])[al]);
        let coef = design.clone().svd(true, true).solve(&rhs, 1e-14).unwrap();
        assert!((coef[0] - fit.b[al]).abs() < 1e-12);
        for i in 0..3 {
            assert!((coef[i + 1] - fit.a.entry(i, al)).abs() < 1e-12);
        }
    }
}

#[test]
fn harmonic_fit_reproduces_harmonic_quadratics() {
    let (n, m) = (3, 2);
    let q = saddle(n, m, 0.7).unwrap();
    let q = QuadraticMap {
        affine: AffineMap::new(vec![0.1, -0.2], Gradient::from_row_slice(3, 2, &[0.3, 0.0, -0.1, 0.2, 0.5, 0.4])).unwrap(),
        quad: q.quad,
    };
    let u = GridMap::from_fn(Dims::new(n, m).unwrap(), 21, |x| q.eval(x)).unwrap();
    let fit = best_harmonic_fit(&u, 0.5).unwrap();
    let probe = [0.2, -0.3, 0.1];
    assert!(dist(&fit.eval(&probe), &q.eval(&probe)) < 1e-12);
    for s in &fit.quad {
        assert!(s.trace().abs() < 1e-12);
    }
    // the fit stays harmonic even for non-harmonic data
    let v = GridMap::from_fn(Dims::new(n, 1).unwrap(), 21, |x| vec![x.iter().map(|c| c * c).sum()]).unwrap();
    let fit = best_harmonic_fit(&v, 0.5).unwrap();
    assert!(fit.quad[0].trace().abs() < 1e-12);
}

#[test]
fn affine_maps_are_perfectly_flat() {
    let l = AffineMap::new(vec![0.2, 0.1], Gradient::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4])).unwrap();
    let u = GridMap::from_fn(Dims::new(2, 2).unwrap(), 41, |x| l.eval(x)).unwrap();
    let step = improve_flatness_step(&u, &l, 1e-2, 0.25).unwrap();
    assert!(step.new_eps < 1e-13);
    let q = QuadraticMap::from_affine(l.clone());
    let step = improve_flatness_quadratic(&u, &q, 1e-2, 0.25, 0.75).unwrap();
    assert!(step.new_eps < 1e-13);
    // exact rescaling keeps an affine map affine with the same slope
    let w = rescale(&u, 0.25, &l.b).unwrap();
    let expect = AffineMap::new(vec![0.0, 0.0], l.a.clone()).unwrap();
    let exact = GridMap::from_fn(Dims::new(2, 2).unwrap(), 41, |x| expect.eval(x)).unwrap();
    assert!(w.sup_distance(&exact) < 1e-13);
}

#[test]
fn flatness_preconditions_are_enforced() {
    let u = GridMap::from_fn(Dims::new(2, 2).unwrap(), 21, |x| vec![0.1 * x[0], 0.0]).unwrap();
    let zero = AffineMap::zero(2, 2);
    assert!(matches!(improve_flatness_step(&u, &zero, 1e-2, 0.25), Err(Error::FlatnessViolated { .. })));
    assert!(matches!(harnack_decay(&u, &zero, 1e-2), Err(Error::FlatnessViolated { .. })));
    let big = saddle(2, 2, 0.5).unwrap();
    assert!(matches!(
        improve_flatness_quadratic(&u, &big, 1e-2, 0.25, 0.75),
        Err(Error::PreconditionUnmet(_))
    ));
    assert!(improve_flatness_step(&u, &zero, 1.0, 1.5).is_err());
}

#[test]
fn solved_problems_improve_flatness() {
    let dims = Dims::new(2, 2).unwrap();
    let params = SolveParams::default();
    for job in 0..3 {
        let p = FlatProblem::random(dims, 41, 1e-2, 17, job).unwrap();
        let (u, report) = p.solve(&params).unwrap();
        assert!(report.converged);
        let step = improve_flatness_step(&u, &p.l, 1e-2, 0.25).unwrap();
        assert!(step.ratio <= 0.6, "job {job}: ratio {}", step.ratio);
        let trace = flatness_trace(&u, &QuadraticMap::from_affine(p.l.clone()), 0.25, 3, None, &params).unwrap();
        assert_eq!(trace.entries.len(), 3);
        assert!(trace.max_ratio() <= 0.6);
        assert!(trace.decays_geometrically(0.2));
        let changes: Vec<f64> = trace.entries.iter().filter_map(|e| e.slope_change).collect();
        assert!(changes.windows(2).all(|w| w[1] < w[0]), "{changes:?}");
    }
}

#[test]
fn quadratic_trace_keeps_coefficients_bounded() {
    let dims = Dims::new(2, 2).unwrap();
    let params = SolveParams::default();
    let p = FlatProblem::random(dims, 41, 1e-2, 18, 0).unwrap().without_tilt();
    let (u, _) = p.solve(&params).unwrap();
    let q0 = QuadraticMap::from_affine(p.l.clone());
    let step = improve_flatness_quadratic(&u, &q0, 1e-2, 0.25, 0.75).unwrap();
    assert!(step.ratio <= 0.6);
    let trace = flatness_trace(&u, &q0, 0.25, 3, Some(0.75), &params).unwrap();
    assert!(trace.max_ratio() <= 0.6);
    assert!(trace.coefficient_growth() <= 2.0);
}

#[test]
fn harnack_decay_is_positive_and_near_harmonic() {
    let dims = Dims::new(2, 2).unwrap();
    let solved = solve_batch(dims, 41, 1e-2, 19, 4, false, &SolveParams::default());
    let report = harnack_experiment(&solved, &ExperimentParams::default(), 19).unwrap();
    assert!(report.pass, "{:?}", report.bounds);
    for job in &report.jobs {
        let theta = job.data["theta"].as_f64().unwrap();
        let theta_h = job.data["theta_harmonic"].as_f64().unwrap();
        assert!(theta > 0.0);
        // untilted data: the harmonic statistic is the leading order
        assert!(theta >= theta_h - 1e-2, "{theta} vs {theta_h}");
    }
}

#[test]
fn harnack_inclusion_always_holds() {
    let dims = Dims::new(2, 2).unwrap();
    for job in 0..3 {
        let p = FlatProblem::random(dims, 41, 1e-2, 20, job).unwrap();
        let (u, _) = p.solve(&SolveParams::default()).unwrap();
        let report = harnack_measure(&u, &p.l).unwrap();
        assert!(report.near_extremal_distance <= report.eta_small);
        for level in &report.levels {
            assert_eq!(level.inclusion_fraction, 1.0, "{level:?}");
            assert!((level.c_prime - (8.0 * level.c).sqrt()).abs() < 1e-12);
        }
        let fractions: Vec<f64> = report.levels.iter().map(|l| l.measure_fraction).collect();
        assert!(fractions.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn unit_ball_volumes() {
    use std::f64::consts::PI;
    let expect = [2.0, PI, 4.0 * PI / 3.0, PI * PI / 2.0];
    for (n, v) in expect.iter().enumerate() {
        assert!((unit_ball_volume(n + 1) - v).abs() < 1e-14);
    }
}

#[test]
fn flat_and_tilted_disks_have_unit_density() {
    for (n, m) in [(2, 1), (2, 2), (3, 2), (4, 3)] {
        let points = msl_core::grid::default_points_per_axis(n);
        let zero = GridMap::from_fn(Dims::new(n, m).unwrap(), points, |_| vec![0.0; m]).unwrap();
        let r = density_ratio(&zero, &vec![0.0; n], 0.5).unwrap();
        assert!((r - 1.0).abs() <= 0.05, "flat n={n}: {r}");
        let mut rng = stream_rng(41, n as u64);
        let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(-0.5..0.5));
        let l = AffineMap::new(vec![0.0; m], Gradient::new(a)).unwrap();
        let u = GridMap::from_fn(Dims::new(n, m).unwrap(), points, |x| l.eval(x)).unwrap();
        let r = density_ratio(&u, &vec![0.0; n], 0.5).unwrap();
        assert!((r - 1.0).abs() <= 0.05, "tilted n={n} m={m}: {r}");
    }
}

#[test]
fn density_rejects_unresolved_scales() {
    let u = GridMap::from_fn(Dims::new(2, 1).unwrap(), 21, |_| vec![0.0]).unwrap();
    assert!(matches!(density_ratio(&u, &[0.0, 0.0], 0.3), Err(Error::ScaleTooFine { .. })));
}

/// The cone's density: graph ∩ B_r is the graph over |x| <= 2r/3, and `F` is
/// homogeneous of degree 0, so the ratio is (2/3)⁴ times the mean of F over S³.
fn cone_density_oracle(samples: usize) -> f64 {
    let mut rng = stream_rng(42, 0);
    let step = 1e-6;
    let mut acc = 0.0;
    for _ in 0..samples {
        let x = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
        let jac = DMatrix::from_fn(4, 3, |i, al| {
            let mut p = x.clone();
            let mut q = x.clone();
            p[i] += step;
            q[i] -= step;
            (lawson_osserman(p.as_slice())[al] - lawson_osserman(q.as_slice())[al]) / (2.0 * step)
        });
        acc += area_integrand(&Gradient::new(jac));
    }
    (2.0f64 / 3.0).powi(4) * acc / samples as f64
}

#[test]
fn lawson_osserman_density_exceeds_one() {
    let oracle = cone_density_oracle(20_000);
    // the vertex singularity limits the quadrature to first order in h/r
    let coarse = density_ratio(&lawson_osserman_grid(21).unwrap(), &[0.0; 4], 1.0).unwrap();
    let fine = density_ratio(&lawson_osserman_grid(41).unwrap(), &[0.0; 4], 1.0).unwrap();
    assert!(coarse > 1.0 && fine > 1.0);
    assert!((fine - oracle).abs() < (coarse - oracle).abs());
    assert!((fine - oracle).abs() <= 0.02 * oracle, "grid {fine} vs oracle {oracle}");
}

#[test]
fn oscillation_is_monotone_in_the_radius() {
    let u = GridMap::from_fn(Dims::new(3, 2).unwrap(), 21, |x| vec![(2.0 * x[0] - x[2]).sin(), x[1] * x[0] + x[2].powi(3)]).unwrap();
    let radii = [0.1, 0.25, 0.4, 0.55, 0.7, 0.85, 1.0];
    let osc: Vec<f64> = radii.iter().map(|&r| oscillation(&u, r)).collect();
    assert!(osc.windows(2).all(|w| w[0] <= w[1]), "{osc:?}");
}

#[test]
fn affine_fit_commutes_with_rigid_maps_of_the_target() {
    let dims = Dims::new(2, 3).unwrap();
    let u = GridMap::from_fn(dims, 41, |x| vec![(x[0] * 3.0).cos(), x[1] * x[1] - x[0], (x[0] + x[1]).exp()]).unwrap();
    let mut rng = stream_rng(43, 0);
    let rot = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let c = [0.5, -1.0, 2.0];
    let moved = u.map(|_, v| (0..3).map(|a| (0..3).map(|b| rot[(a, b)] * v[b]).sum::<f64>() + c[a]).collect()).unwrap();
    let f = best_affine_fit(&u, 0.7).unwrap();
    let g = best_affine_fit(&moved, 0.7).unwrap();
    let expect = f.transform_values(&rot, &c);
    assert!(dist(&g.b, &expect.b) < 1e-10);
    assert!((g.a.as_matrix() - expect.a.as_matrix()).amax() < 1e-10);
}

#[test]
fn affine_density_converges_at_first_order() {
    let l = AffineMap::new(vec![0.0, 0.0], Gradient::from_row_slice(2, 2, &[0.4, -0.3, 0.2, 0.5])).unwrap();
    let errors: Vec<(f64, f64)> = [21, 41, 81]
        .iter()
        .map(|&pts| {
            let u = GridMap::from_fn(Dims::new(2, 2).unwrap(), pts, |x| l.eval(x)).unwrap();
            (u.spacing(), (density_ratio(&u, &[0.0, 0.0], 0.5).unwrap() - 1.0).abs())
        })
        .collect();
    let order = (errors[0].1 / errors[2].1).ln() / (errors[0].0 / errors[2].0).ln();
    assert!(order >= 0.9, "{errors:?} order {order}");
}

#[test]
fn harmonic_extension_improves_flatness() {
    let dims = Dims::new(2, 2).unwrap();
    let eps = 1e-2;
    let eta = 0.25;
    for job in 0..4 {
        let p = FlatProblem::random(dims, 41, eps, 44, job).unwrap();
        let h = msl_core::solver::solve_laplace(dims, 41, &|x| p.boundary(x), 1e-12).unwrap();
        let dev = msl_core::flatness::sup_deviation(&h, 1.0, |x| p.l.eval(x));
        let center = h.lattice().nearest(&[0.0, 0.0]);
        let (grad, _) = h.gradient_at(center).unwrap();
        let l0 = AffineMap::new(h.value(center).to_vec(), grad).unwrap();
        let taylor = msl_core::flatness::sup_deviation(&h, eta, |x| l0.eval(x)) / (dev * eta);
        let step = improve_flatness_step(&h, &p.l, dev, eta).unwrap();
        let hh = h.spacing() * h.spacing();
        assert!(taylor <= 0.5 + hh / dev, "job {job}: Taylor ratio {taylor}");
        assert!(step.ratio <= 0.5 + hh / dev, "job {job}: fitted ratio {}", step.ratio);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn oscillation_is_translation_invariant_and_homogeneous(seed in 0u64..1000, c in -2.0f64..2.0, s in 0.1f64..3.0) {
        let mut rng = stream_rng(seed, 3);
        let k: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = move |x: &[f64]| vec![(k[0] * x[0] + k[1] * x[1]).sin(), (k[2] * x[0] * x[1] + k[3]).cos()];
        let u = GridMap::from_fn(Dims::new(2, 2).unwrap(), 21, &f).unwrap();
        let v = u.map(|_, w| w.iter().map(|y| s * y + c).collect()).unwrap();
        let (a, b) = (oscillation(&u, 0.7), oscillation(&v, 0.7));
        prop_assert!((b - s * a).abs() <= 1e-9 * (1.0 + b));
    }

    #[test]
    fn enclosing_ball_contains_its_points(seed in 0u64..1000, count in 1usize..40) {
        let mut rng = stream_rng(seed, 4);
        let pts: Vec<Vec<f64>> = (0..count).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let (c, r) = min_enclosing_ball(&pts);
        prop_assert!(pts.iter().all(|p| dist(p, &c) <= r * (1.0 + 1e-10) + 1e-14));
    }

    #[test]
    fn affine_fit_recovers_affine_maps(seed in 0u64..1000) {
        let mut rng = stream_rng(seed, 5);
        let l = AffineMap::new(
            vec![rng.random_range(-1.0..1.0)],
            Gradient::new(DMatrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0))),
        ).unwrap();
        let u = GridMap::from_fn(Dims::new(2, 1).unwrap(), 21, |x| l.eval(x)).unwrap();
        let fit = best_affine_fit(&u, 0.5).unwrap();
        prop_assert!((fit.b[0] - l.b[0]).abs() < 1e-12);
        prop_assert!((fit.a.as_matrix() - l.a.as_matrix()).amax() < 1e-12);
    }
}
