use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use msl_core::comparison::{
    certify_region, check_admissible, default_c0, family_l1, family_l35, family_quadratic, viscosity_screen, ComparisonCertificate,
    FiniteDifferenceField, HarmonicTerm, Paraboloid, QuadraticField, Region, SamplingSpec, ScalarField, Verdict,
};
use msl_core::experiments::{
    density_experiment, flatness_experiment, harnack_experiment, lawson_osserman_experiment, quadratic_threshold, saddle,
    solve_batch, threshold_experiment, ExperimentParams, ExperimentReport, FlatProblem, FlatnessJob, SolvedProblem,
    THRESHOLD_BRACKET,
};
use msl_core::flatness::slope;
use msl_core::geometry::Gradient;
use msl_core::grid::GridMap;
use msl_core::maps::{AffineMap, QuadraticMap};
use msl_core::residual::{sup_residual, ResidualForm};
use msl_core::sampling::ball_lattice;
use msl_core::solver::{solve_dirichlet, SolveParams};
use msl_core::Error;
use nalgebra::DVector;
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{to_value, validate_file, Bundle};
use crate::Failure;

const LO_POINTS: usize = 21;
const BUMP_RADIUS: f64 = 0.3;

fn solve_params(cfg: &RunConfig) -> SolveParams {
    SolveParams {
        tau: cfg.tau,
        tol_res: cfg.tol_res,
        max_iter: cfg.max_iter,
        monitor_every: cfg.monitor_every,
    }
}

fn experiment_params(cfg: &RunConfig) -> ExperimentParams {
    ExperimentParams {
        eps: cfg.eps_or_default(),
        eta: cfg.eta,
        beta: cfg.beta,
        c0: cfg.c0,
        eps0: cfg.eps0,
        ..ExperimentParams::default()
    }
}

fn flat_problem(cfg: &RunConfig) -> Result<FlatProblem, Failure> {
    Ok(FlatProblem::random(cfg.dims().map_err(Failure::usage)?, cfg.points(), cfg.eps_or_default(), cfg.seed, 0)?)
}

fn residuals(u: &GridMap) -> serde_json::Value {
    let sup = |form| sup_residual(u, form, |_| true).ok();
    json!({
        "nondivergence": sup(ResidualForm::Nondivergence),
        "divergence": sup(ResidualForm::Divergence),
    })
}

pub fn solve(cfg: &RunConfig) -> Result<u8, Failure> {
    let start = Instant::now();
    let dims = cfg.dims().map_err(Failure::usage)?;
    let problem = flat_problem(cfg)?;
    let boundary: Box<dyn Fn(&[f64]) -> Vec<f64> + Sync> = match cfg.boundary.as_str() {
        "flat" => Box::new(move |x: &[f64]| problem.boundary(x)),
        "affine" => Box::new(move |x: &[f64]| problem.l.eval(x)),
        "quadratic" => {
            let q = saddle(dims.n, dims.m, cfg.eps_or_default())?;
            Box::new(move |x: &[f64]| q.eval(x))
        }
        other => return Err(Failure::usage(format!("unknown boundary {other:?} (flat, affine, quadratic)"))),
    };
    let mut out = Bundle::create(cfg)?;
    let (u, report) = solve_dirichlet(dims, cfg.points(), &*boundary, &solve_params(cfg))?;
    let mut bin = Vec::new();
    u.write_binary(&mut bin)?;
    out.raw("solution.bin", &bin)?;
    out.json(
        "solve.json",
        "solve",
        json!({
            "report": report,
            "sup_residual": residuals(&u),
            "spacing": u.spacing(),
        }),
    )?;
    if !report.area_trace.is_empty() {
        out.csv("area_trace.csv", |w| {
            writeln!(w, "iteration,area").map_err(Failure::io)?;
            for (i, a) in &report.area_trace {
                writeln!(w, "{i},{a:e}").map_err(Failure::io)?;
            }
            Ok(())
        })?;
    }
    out.log(format!(
        "solve: {} iterations, residual {:e}, converged {} ({:.2?})",
        report.iterations,
        report.final_sup_residual,
        report.converged,
        start.elapsed()
    ));
    out.finish_log()?;
    Ok(if report.converged { 0 } else { 2 })
}

/// `l` from the seeded flat problem with its slope rescaled to `|A| = 1`.
fn unit_slope_map(cfg: &RunConfig) -> Result<AffineMap, Failure> {
    let l = flat_problem(cfg)?.l;
    let a = slope(&l).as_matrix();
    let norm = a.norm();
    let a = if norm > 0.0 { a / norm } else { a.clone() };
    let b = l.eval(&vec![0.0; l.n()]);
    Ok(AffineMap::new(b, Gradient::new(a))?)
}

fn tube(axis: QuadraticMap, eps: f64) -> Region {
    Region::Tube {
        axis,
        x_radius: 0.75,
        inner: eps / 10.0,
        outer: eps,
    }
}

fn probe_ball(n: usize, m: usize) -> Region {
    let mut center = vec![0.0; n + m];
    center[0] = 0.5;
    Region::Ball { center, radius: 0.2 }
}

pub fn certify(cfg: &RunConfig) -> Result<u8, Failure> {
    let start = Instant::now();
    let dims = cfg.dims().map_err(Failure::usage)?;
    let (n, m) = (dims.n, dims.m);
    let eps = cfg.eps.ok_or_else(|| Failure::usage("certify needs --eps"))?;
    let mut admissibility = None;
    let (field, region): (Box<dyn ScalarField>, Region) = match cfg.family.as_str() {
        "l1" => {
            let l = unit_slope_map(cfg)?;
            let phi = Paraboloid::l1_default(n);
            let c0 = cfg.c0.unwrap_or_else(|| default_c0(n, l.slope_norm()));
            admissibility = Some(check_admissible(&phi, c0, &ball_lattice(n, 1.0, 0.25))?);
            let field = family_l1(&l, eps, Arc::new(phi))?;
            (Box::new(field), tube(QuadraticMap::from_affine(l), eps))
        }
        "l35" => {
            let h = HarmonicTerm::Polynomial(saddle(n, m, 1.0)?);
            let field = family_l35(h, &QuadraticMap::zero(n, m), eps, cfg.l35_eta)?;
            (Box::new(field), Region::cylinder(n, m, 0.5, eps))
        }
        "quadratic" => {
            let q = saddle(n, m, eps.powf(cfg.beta))?;
            let field = family_quadratic(&q, eps, cfg.beta, None)?;
            (Box::new(field), tube(q, eps))
        }
        "sphere" => {
            let field = QuadraticField::sphere(dims, &DVector::zeros(n + m), 1.0)?;
            (Box::new(field), probe_ball(n, m))
        }
        "neg-sphere" => {
            let f: msl_core::comparison::RawCallback = Arc::new(|p: &DVector<f64>| -p.norm_squared());
            (Box::new(FiniteDifferenceField::new(dims, "neg-sphere", f)), probe_ball(n, m))
        }
        other => {
            return Err(Failure::usage(format!(
                "unknown family {other:?} (l1, l35, quadratic, sphere, neg-sphere)"
            )))
        }
    };
    let mut out = Bundle::create(cfg)?;
    let spec = SamplingSpec::standard(&region, n, cfg.seed);
    let cert: ComparisonCertificate = certify_region(field.as_ref(), &region, n, &spec)?;
    let admissible = admissibility.as_ref().is_none_or(|a| a.admissible);
    out.json(
        "certificate.json",
        "certify",
        json!({
            "family": cfg.family,
            "admissibility": admissibility,
            "certificate": cert,
        }),
    )?;
    out.log(format!(
        "certify {}: {:?}, min margin {:e}, {} samples kept ({:.2?})",
        cfg.family,
        cert.verdict,
        cert.min_margin,
        cert.retained,
        start.elapsed()
    ));
    out.finish_log()?;
    Ok(if cert.verdict == Verdict::Pass && admissible { 0 } else { 3 })
}

fn bumped(u: &GridMap, height: f64) -> Result<GridMap, Failure> {
    Ok(u.map(|x, v| {
        let r2 = x.iter().map(|c| c * c).sum::<f64>() / (BUMP_RADIUS * BUMP_RADIUS);
        let mut out = v.to_vec();
        if r2 < 1.0 {
            out[0] += height * (1.0 - r2).powi(3);
        }
        out
    })?)
}

pub fn screen(cfg: &RunConfig) -> Result<u8, Failure> {
    let start = Instant::now();
    let u = match &cfg.input {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| Failure::usage(format!("cannot open {path}: {e}")))?;
            GridMap::read_binary(std::io::BufReader::new(f))?
        }
        None => {
            let (u, report) = flat_problem(cfg)?.solve(&solve_params(cfg))?;
            if !report.converged {
                return Err(Failure {
                    code: 2,
                    message: format!("solve did not converge (residual {:e})", report.final_sup_residual),
                });
            }
            u
        }
    };
    let u = if cfg.bump != 0.0 { bumped(&u, cfg.bump)? } else { u };
    let mut out = Bundle::create(cfg)?;
    let reports = viscosity_screen(&u, cfg.seed, cfg.count)?;
    let violations = reports.iter().filter(|r| r.violation).count();
    out.json(
        "screen.json",
        "screen",
        json!({
            "dims": u.dims(),
            "points": u.lattice().points_per_axis(),
            "violations": violations,
            "reports": reports,
        }),
    )?;
    out.log(format!("screen: {violations} violations in {} fields ({:.2?})", reports.len(), start.elapsed()));
    out.finish_log()?;
    Ok(if violations == 0 { 0 } else { 3 })
}

fn nonconverged(solved: &[msl_core::Result<SolvedProblem>]) -> bool {
    solved
        .iter()
        .any(|s| matches!(s, Err(Error::NotConverged { .. } | Error::Diverged { .. })))
}

const GNUPLOT: &str = "\
# gnuplot template: load 'trace.gp' from the output directory
set datafile separator ','
set logscale y
set xlabel 'k'
set ylabel 'eps_k'
files = system('ls trace_*.csv')
plot for [f in files] f using 1:3 skip 3 with linespoints title f
";

pub fn experiment(cfg: &RunConfig) -> Result<u8, Failure> {
    let start = Instant::now();
    let dims = cfg.dims().map_err(Failure::usage)?;
    let points = cfg.points();
    let mut params = experiment_params(cfg);
    let sp = solve_params(cfg);
    let mut out = Bundle::create(cfg)?;
    let mut stalled = false;
    let mut report: ExperimentReport = match cfg.kind.as_str() {
        kind @ ("flatness" | "flatness-quadratic") => {
            let quadratic = kind == "flatness-quadratic";
            if quadratic && params.eps0.is_none() {
                let (lo, hi) = THRESHOLD_BRACKET;
                let search = quadratic_threshold(dims, params.beta, false, cfg.seed, lo, hi, cfg.bisect_steps)?;
                params.eps0 = search.eps_star;
                out.log(format!("quadratic threshold eps0 = {:?}", params.eps0));
            }
            let solved = solve_batch(dims, points, params.eps, cfg.seed, cfg.jobs, !quadratic, &sp);
            stalled = nonconverged(&solved);
            flatness_experiment(&solved, &params, cfg.trace_steps, quadratic, cfg.slack, &sp, cfg.seed)?
        }
        "harnack" => {
            let solved = solve_batch(dims, points, params.eps, cfg.seed, cfg.jobs, true, &sp);
            stalled = nonconverged(&solved);
            harnack_experiment(&solved, &params, cfg.seed)?
        }
        "lawson-osserman" => {
            let levels = match cfg.grid_n {
                Some(g) => vec![g.div_ceil(2) | 1, g],
                None => vec![21, 41],
            };
            lawson_osserman_experiment(&levels, cfg.seed)?
        }
        "density" => density_experiment(dims, points, cfg.count, LO_POINTS, cfg.seed)?,
        "thresholds" => threshold_experiment(dims, &params, cfg.l35_eta, cfg.bisect_steps, cfg.seed)?,
        other => {
            return Err(Failure::usage(format!(
                "unknown experiment {other:?} (flatness, flatness-quadratic, harnack, lawson-osserman, density, thresholds)"
            )))
        }
    };
    if let Some(e0) = cfg.eps0 {
        if params.eps > e0 && !report.out_of_regime {
            report.out_of_regime = true;
            report = report.finish();
        }
    }

    let mut traces = 0;
    for job in &report.jobs {
        if let Ok(fj) = serde_json::from_value::<FlatnessJob>(job.data.clone()) {
            out.csv(&format!("trace_{}.csv", job.job), |w| Ok(fj.trace.write_csv(w)?))?;
            traces += 1;
        }
    }
    if traces > 0 {
        out.raw("trace.gp", GNUPLOT.as_bytes())?;
    }
    out.json("experiment.json", "experiment", json!({ "report": to_value(&report) }))?;
    for b in &report.bounds {
        out.log(format!(
            "{} {}: {:e} {} {:e}",
            if b.pass { "PASS" } else { "FAIL" },
            b.name,
            b.value,
            b.relation,
            b.bound
        ));
    }
    for (k, v) in &report.constants {
        out.log(format!("{k} = {v:e}"));
    }
    for j in report.jobs.iter().filter(|j| j.error.is_some()) {
        out.log(format!("job {} failed: {}", j.job, j.error.as_deref().unwrap_or("")));
    }
    if report.out_of_regime {
        out.log("out of regime: eps exceeds the recorded threshold");
    }
    out.log(format!("experiment {}: pass {} ({:.2?})", report.experiment, report.pass, start.elapsed()));
    out.finish_log()?;
    Ok(if report.pass {
        0
    } else if stalled {
        2
    } else {
        3
    })
}

pub fn validate(files: &[PathBuf]) -> Result<u8, Failure> {
    let mut ok = true;
    for f in files {
        if !f.exists() {
            return Err(Failure::usage(format!("no such file {}", f.display())));
        }
        match validate_file(f) {
            Ok(()) => println!("ok {}", f.display()),
            Err(e) => {
                println!("invalid {}: {e}", f.display());
                ok = false;
            }
        }
    }
    Ok(if ok { 0 } else { 3 })
}
