use std::sync::Arc;

use msl_core::comparison::{
    certify_region, check_admissible, default_c0, family_l1, family_l35, family_quadratic, is_comparison_at, touching_check,
    viscosity_screen, FiniteDifferenceField, HarmonicTerm, Paraboloid, QuadraticField, Region, RigidMotion, SamplingSpec,
    ScalarField, TestFunction, Verdict,
};
use msl_core::experiments::saddle;
use msl_core::geometry::{AmbientPoint, Dims, Gradient};
use msl_core::grid::GridMap;
use msl_core::maps::{AffineMap, QuadraticMap};
use msl_core::sampling::{ball_lattice, stream_rng};
use msl_core::solver::{solve_dirichlet, SolveParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn slope(seed: u64, n: usize, m: usize, norm: f64) -> AffineMap {
    let mut rng = stream_rng(seed, 0);
    let a = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = &a * (norm / a.norm());
    AffineMap::new((0..m).map(|_| rng.random_range(-0.5..0.5)).collect(), Gradient::new(a)).unwrap()
}

fn l1_phi(n: usize) -> Arc<dyn TestFunction> {
    Arc::new(Paraboloid::l1_default(n))
}

#[test]
fn default_test_function_is_admissible() {
    for n in 2..=4 {
        let phi = Paraboloid::l1_default(n);
        let pts = ball_lattice(n, 1.0, 0.25);
        let adm = check_admissible(&phi, default_c0(n, 1.0), &pts).unwrap();
        assert!(adm.admissible, "{adm:?}");
    }
}

#[test]
fn l1_family_certifies_in_its_tube() {
    let (n, m) = (2, 2);
    let eps = 1e-2;
    let l = slope(3, n, m, 1.0);
    let field = family_l1(&l, eps, l1_phi(n)).unwrap();
    let region = Region::Tube {
        axis: QuadraticMap::from_affine(l),
        x_radius: 0.75,
        inner: eps / 10.0,
        outer: eps,
    };
    let cert = certify_region(&field, &region, n, &SamplingSpec::standard(&region, n, 1)).unwrap();
    assert_eq!(cert.verdict, Verdict::Pass);
    assert!(cert.min_margin > 0.0);
    assert!(cert.retained > 0);
}

#[test]
fn certificates_are_reproducible() {
    let (n, m) = (2, 1);
    let field = family_l1(&slope(4, n, m, 0.5), 0.05, l1_phi(n)).unwrap();
    let region = Region::cylinder(n, m, 0.5, 0.05);
    let spec = SamplingSpec {
        hx: 0.1,
        hz: 0.01,
        quasi_random: 200,
        seed: 9,
    };
    let a = serde_json::to_string(&certify_region(&field, &region, n, &spec).unwrap()).unwrap();
    let b = serde_json::to_string(&certify_region(&field, &region, n, &spec).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn quadratic_and_compactness_families_pass_at_small_eps() {
    let (n, m) = (2, 2);
    let eps: f64 = 1e-2;
    let beta = 0.75;
    let q = saddle(n, m, eps.powf(beta)).unwrap();
    let field = family_quadratic(&q, eps, beta, None).unwrap();
    let region = Region::Tube {
        axis: q,
        x_radius: 0.75,
        inner: eps / 10.0,
        outer: eps,
    };
    let cert = certify_region(&field, &region, n, &SamplingSpec::standard(&region, n, 2)).unwrap();
    assert_eq!(cert.verdict, Verdict::Pass, "min margin {}", cert.min_margin);

    let h = HarmonicTerm::Polynomial(saddle(n, m, 1.0).unwrap());
    let field = family_l35(h, &QuadraticMap::zero(n, m), eps, 0.1).unwrap();
    let region = Region::cylinder(n, m, 0.5, eps);
    let cert = certify_region(&field, &region, n, &SamplingSpec::standard(&region, n, 3)).unwrap();
    assert_eq!(cert.verdict, Verdict::Pass, "min margin {}", cert.min_margin);
}

#[test]
fn concave_sphere_fails_and_convex_sphere_passes() {
    let dims = Dims::new(2, 1).unwrap();
    let center = DVector::zeros(3);
    let region = Region::Ball {
        center: vec![0.5, 0.0, 0.0],
        radius: 0.2,
    };
    let spec = SamplingSpec::standard(&region, 2, 0);
    let up = certify_region(&QuadraticField::sphere(dims, &center, 1.0).unwrap(), &region, 2, &spec).unwrap();
    let down = certify_region(&QuadraticField::sphere(dims, &center, -1.0).unwrap(), &region, 2, &spec).unwrap();
    assert_eq!(up.verdict, Verdict::Pass);
    assert_eq!(down.verdict, Verdict::Fail);
}

fn assert_matches_differences(field: &dyn ScalarField, points: &[DVector<f64>]) {
    for p in points {
        let g = field.gradient(p);
        let h = field.hessian(p);
        let (gf, hf) = differences(field, p, 1e-4);
        let gerr = (&g - &gf).amax();
        let herr = (h.as_matrix() - &hf).amax();
        assert!(gerr <= 1e-6 * (1.0 + g.amax()), "gradient error {gerr:e} at {p}");
        assert!(herr <= 1e-4 * (1.0 + h.as_matrix().amax()), "hessian error {herr:e} at {p}");
    }
}

/// Fourth-order central differences of `field.value`.
fn differences(field: &dyn ScalarField, p: &DVector<f64>, step: f64) -> (DVector<f64>, DMatrix<f64>) {
    let k = p.len();
    let at = |d: &[(usize, f64)]| {
        let mut q = p.clone();
        for &(i, s) in d {
            q[i] += s;
        }
        field.value(&q)
    };
    let g = DVector::from_fn(k, |i, _| {
        (8.0 * (at(&[(i, step)]) - at(&[(i, -step)])) - (at(&[(i, 2.0 * step)]) - at(&[(i, -2.0 * step)]))) / (12.0 * step)
    });
    let h = DMatrix::from_fn(k, k, |i, j| {
        let d = |a: f64, b: f64| at(&[(i, a * step), (j, b * step)]);
        (d(1.0, 1.0) - d(1.0, -1.0) - d(-1.0, 1.0) + d(-1.0, -1.0)) / (4.0 * step * step)
    });
    (g, h)
}

fn tube_points(axis: &QuadraticMap, eps: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let (n, m) = (axis.n(), axis.m());
    let mut rng = stream_rng(seed, 0);
    (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let w = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = w.normalize() * eps * rng.random_range(0.3..1.0);
            let z = DVector::from_vec(axis.eval(&x)) + w;
            DVector::from_iterator(n + m, x.into_iter().chain(z.iter().copied()))
        })
        .collect()
}

#[test]
fn families_agree_with_finite_differences() {
    let (n, m) = (3, 2);
    let eps = 0.1;
    let l = slope(5, n, m, 0.8);
    let f1 = family_l1(&l, eps, Arc::new(Paraboloid::new(vec![0.1, -0.2, 0.0], 0.05))).unwrap();
    assert_matches_differences(&f1, &tube_points(&QuadraticMap::from_affine(l), eps, 30, 1));

    let q = saddle(n, m, 0.1).unwrap();
    let fq = family_quadratic(&q, eps, 0.75, None).unwrap();
    assert_matches_differences(&fq, &tube_points(&q, eps, 30, 2));

    let approx = QuadraticMap::from_affine(slope(6, n, m, 0.3));
    let f35 = family_l35(HarmonicTerm::Polynomial(saddle(n, m, 1.0).unwrap()), &approx, eps, 0.2).unwrap();
    assert_matches_differences(&f35, &tube_points(&approx, eps, 30, 3));
}

#[test]
fn finite_difference_field_matches_closed_form() {
    let dims = Dims::new(2, 1).unwrap();
    let exact = QuadraticField::sphere(dims, &DVector::from_vec(vec![0.1, 0.2, -0.3]), 1.0).unwrap();
    let raw = exact.clone();
    let fd = FiniteDifferenceField::new(dims, "sphere", Arc::new(move |p: &DVector<f64>| raw.value(p)));
    let p = DVector::from_vec(vec![0.4, -0.1, 0.7]);
    assert!((fd.gradient(&p) - exact.gradient(&p)).amax() < 1e-8);
    assert!((fd.hessian(&p).as_matrix() - exact.hessian(&p).as_matrix()).amax() < 1e-5);
}

fn random_rotation(rng: &mut impl Rng, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q()
}

#[test]
fn comparison_margin_is_invariant_under_rigid_motions() {
    let (n, m) = (2, 2);
    let l = slope(7, n, m, 0.6);
    let field = family_l1(&l, 0.1, l1_phi(n)).unwrap();
    let mut rng = stream_rng(8, 0);
    let moved = RigidMotion::new(
        field.clone(),
        random_rotation(&mut rng, n + m),
        DVector::from_fn(n + m, |_, _| rng.random_range(-1.0..1.0)),
    )
    .unwrap();
    for p in tube_points(&QuadraticMap::from_affine(l), 0.1, 50, 4) {
        let before = is_comparison_at(&field, &AmbientPoint::from_vector(n, &p), n).unwrap();
        let after = is_comparison_at(&moved, &AmbientPoint::from_vector(n, &moved.push(&p)), n).unwrap();
        assert!((before - after).abs() < 1e-10 * (1.0 + before.abs()));
        assert!((field.value(&p) - moved.value(&moved.push(&p))).abs() < 1e-12);
    }
}

fn bumped(u: &GridMap, height: f64, radius: f64) -> GridMap {
    u.map(|x, v| {
        let r2 = x.iter().map(|c| c * c).sum::<f64>() / (radius * radius);
        let mut out = v.to_vec();
        if r2 < 1.0 {
            out[0] += height * (1.0 - r2).powi(3);
        }
        out
    })
    .unwrap()
}

#[test]
fn touching_is_invariant_under_vertical_translation() {
    let (n, m) = (2, 2);
    let l = slope(9, n, m, 0.4);
    let u = bumped(&GridMap::from_fn(Dims::new(n, m).unwrap(), 41, |x| l.eval(x)).unwrap(), 0.02, 0.4);
    let field = family_l1(&l, 0.03, l1_phi(n)).unwrap();
    let shift = [0.0, 0.0, 0.3, -0.7];
    let moved_u = u.map(|_, v| vec![v[0] + shift[2], v[1] + shift[3]]).unwrap();
    let moved = RigidMotion::new(field.clone(), DMatrix::identity(4, 4), DVector::from_row_slice(&shift)).unwrap();
    let a = touching_check(&u, &field).unwrap();
    let b = touching_check(&moved_u, &moved).unwrap();
    assert!((a.max_value - b.max_value).abs() < 1e-12);
    assert_eq!(a.argmax.x, b.argmax.x);
    assert_eq!(a.violation, b.violation);
}

#[test]
fn screen_finds_no_violation_on_affine_maps() {
    for (n, m, seed) in [(2, 2, 1), (3, 1, 2), (2, 3, 3)] {
        let l = slope(seed, n, m, 0.7);
        let u = GridMap::from_fn(Dims::new(n, m).unwrap(), 21, |x| l.eval(x)).unwrap();
        let reports = viscosity_screen(&u, seed, 100).unwrap();
        assert_eq!(reports.iter().filter(|r| r.violation).count(), 0);
    }
}

#[test]
fn screen_separates_solutions_from_perturbed_maps() {
    let dims = Dims::new(2, 2).unwrap();
    let g = |x: &[f64]| vec![0.1 * x[0] + 0.01 * (2.0 * x[1]).sin(), -0.2 * x[1] + 0.01 * (x[0] * x[1]).cos()];
    let (u, report) = solve_dirichlet(dims, 41, &g, &SolveParams::default()).unwrap();
    assert!(report.converged);
    let clean = viscosity_screen(&u, 5, 100).unwrap();
    assert_eq!(clean.iter().filter(|r| r.violation).count(), 0);
    let dirty = viscosity_screen(&bumped(&u, 1e-2, 0.3), 5, 100).unwrap();
    assert!(dirty.iter().any(|r| r.violation));
}
