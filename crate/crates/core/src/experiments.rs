//! Seeded flat Dirichlet problems and the batch experiments built on them:
//! flatness traces, Harnack statistics, density ratios, the Lawson–Osserman
//! refinement check and empirical comparison thresholds.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::{
    bisect_threshold, certify_region, family_l35, family_quadratic, HarmonicTerm, Region, SamplingSpec, ThresholdSearch,
};
use crate::error::{invalid, Error, Result};
use crate::flatness::{
    best_affine_fit, best_harmonic_fit, density_ratio, harnack_decay, harnack_measure_experiment, improve_flatness_step,
    oscillation, subtract, sup_deviation, HarnackMeasureReport,
};
use crate::geometry::{Dims, Gradient};
use crate::grid::{norm, GridMap};
use crate::interp::cubic_jet;
use crate::linalg::SymMatrix;
use crate::maps::{AffineMap, QuadraticMap};
use crate::residual::{sup_residual, ResidualForm};
use crate::sampling::stream_rng;
use crate::solver::{lawson_osserman, solve_dirichlet, solve_dirichlet_warm, solve_laplace, SolveParams, SolveReport};

pub const FORMAT_VERSION: &str = "msl-v1";
/// Allowance on the `ratio <= 1/2` predictions for discretization error.
pub const DEFAULT_SLACK: f64 = 0.2;
pub const DEFAULT_ETA: f64 = 0.25;

/// The constants of the flatness iteration. Measured quantities are `None`
/// until an experiment fills them in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub eps: f64,
    pub eta: f64,
    pub theta: Option<f64>,
    pub mu: Option<f64>,
    pub delta: Option<f64>,
    pub beta: f64,
    pub c0: Option<f64>,
    pub eps0: Option<f64>,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            eps: 1e-2,
            eta: DEFAULT_ETA,
            theta: None,
            mu: None,
            delta: None,
            beta: 0.75,
            c0: None,
            eps0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Mode {
    component: usize,
    k: [f64; 4],
    phase: f64,
    amp: f64,
}

/// Boundary data `g = l + ε v` with `l` a random affine map (entries in
/// `±0.3`) and `v` a sum of random low-frequency sines scaled so that
/// `max |v| = 0.9` over the boundary lattice points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatProblem {
    pub dims: Dims,
    pub points: usize,
    pub eps: f64,
    pub seed: u64,
    pub job: u64,
    pub l: AffineMap,
    modes: Vec<Mode>,
    scale: f64,
}

impl FlatProblem {
    pub const MODES_PER_COMPONENT: usize = 3;

    pub fn random(dims: Dims, points: usize, eps: f64, seed: u64, job: u64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(invalid("eps", "must be positive"));
        }
        let (n, m) = (dims.n, dims.m);
        let mut rng = stream_rng(seed, job);
        let b = (0..m).map(|_| rng.random_range(-0.3..0.3)).collect();
        let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(-0.3..0.3));
        let l = AffineMap::new(b, Gradient::new(a))?;
        let mut modes = Vec::new();
        for component in 0..m {
            for _ in 0..Self::MODES_PER_COMPONENT {
                let mut k = [0.0; 4];
                let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let len = norm(&dir).max(1e-3);
                let freq = rng.random_range(0.5..1.5);
                for i in 0..n {
                    k[i] = dir[i] / len * freq;
                }
                modes.push(Mode {
                    component,
                    k,
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: rng.random_range(0.2..1.0),
                });
            }
        }
        let mut p = Self {
            dims,
            points,
            eps,
            seed,
            job,
            l,
            modes,
            scale: 1.0,
        };
        let probe = GridMap::from_fn(dims, points, |_| vec![0.0; m])?;
        let vmax = probe
            .boundary_indices()
            .into_iter()
            .map(|i| norm(&p.perturbation(&probe.position(i))))
            .fold(0.0, f64::max);
        p.scale = 0.9 / vmax.max(1e-12);
        Ok(p)
    }

    /// The same data with the slope of `l` removed, so that every coefficient
    /// of the affine part is below `eps^β` as the quadratic step requires.
    pub fn without_tilt(mut self) -> Self {
        self.l.a = Gradient::zeros(self.dims.n, self.dims.m);
        self
    }

    /// `v(x)`, with `max |v| = 0.9` on the boundary lattice points.
    pub fn perturbation(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.dims.m];
        for md in &self.modes {
            let arg: f64 = (0..self.dims.n).map(|i| md.k[i] * x[i]).sum::<f64>() + md.phase;
            v[md.component] += md.amp * arg.sin();
        }
        v.iter().map(|c| c * self.scale).collect()
    }

    pub fn boundary(&self, x: &[f64]) -> Vec<f64> {
        self.l.eval(x).into_iter().zip(self.perturbation(x)).map(|(a, b)| a + self.eps * b).collect()
    }

    pub fn solve(&self, params: &SolveParams) -> Result<(GridMap, SolveReport)> {
        solve_dirichlet(self.dims, self.points, &|x| self.boundary(x), params)
    }
}

/// `y ↦ (u(ηy) − c)/η` on the standard lattice, boundary and interior filled
/// by cubic interpolation.
pub fn rescale(u: &GridMap, eta: f64, shift: &[f64]) -> Result<GridMap> {
    let failed = std::sync::atomic::AtomicBool::new(false);
    let out = GridMap::from_fn(u.dims(), u.lattice().points_per_axis(), |y| {
        let x: Vec<f64> = y.iter().map(|v| v * eta).collect();
        match cubic_jet(u, &x) {
            Ok(j) => j.value.iter().zip(shift).map(|(a, c)| (a - c) / eta).collect(),
            Err(_) => {
                failed.store(true, std::sync::atomic::Ordering::Relaxed);
                vec![f64::NAN; shift.len()]
            }
        }
    })?;
    if failed.into_inner() {
        return Err(invalid("eta", "rescaled ball is not resolved by the interpolation stencil"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: usize,
    /// `η^k`, the scale in original coordinates.
    pub r_k: f64,
    /// `sup_{B_1} |u_k − l_k|` in rescaled coordinates.
    pub eps: f64,
    pub osc: f64,
    pub new_eps: f64,
    pub ratio: f64,
    /// The refit on `B_η`, in rescaled coordinates.
    pub approx: QuadraticMap,
    /// Norm of the slope change from the previous step.
    pub slope_change: Option<f64>,
    /// `ε_k |A_k|`: the tilt a rotation-based iteration would remove.
    pub tilt: f64,
    pub solve: Option<SolveReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessTrace {
    pub quadratic: bool,
    pub eta: f64,
    pub beta: Option<f64>,
    pub entries: Vec<TraceEntry>,
    /// Quadratic coefficient bound per step in original coordinates.
    pub original_quadratic_coefficients: Vec<f64>,
}

impl FlatnessTrace {
    pub fn max_ratio(&self) -> f64 {
        self.entries.iter().map(|e| e.ratio).fold(0.0, f64::max)
    }

    /// `new_eps_k η^k <= eps_0 (c η)^{k+1}` at every step, with `c = ½(1 + slack)`
    /// for affine traces and `c = ½(1 + slack) η` for quadratic ones; all in
    /// original coordinates.
    pub fn decays_geometrically(&self, slack: f64) -> bool {
        let Some(first) = self.entries.first() else {
            return false;
        };
        let c = 0.5 * (1.0 + slack) * if self.quadratic { self.eta } else { 1.0 };
        self.entries
            .iter()
            .all(|e| e.new_eps * self.eta.powi(e.k as i32) <= first.eps * (c * self.eta).powi(e.k as i32 + 1))
    }

    /// Largest quadratic coefficient along the trace over the first one, in
    /// original coordinates.
    pub fn coefficient_growth(&self) -> f64 {
        let first = self.original_quadratic_coefficients.first().copied().unwrap_or(0.0);
        let max = self.original_quadratic_coefficients.iter().copied().fold(0.0, f64::max);
        if first > 0.0 {
            max / first
        } else if max > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    }

    /// CSV with columns `k, r_k, eps, osc, new_eps, ratio`, then the fitted
    /// constant, slope and (quadratic traces) quadratic coefficients.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let Some(first) = self.entries.first() else {
            return Ok(());
        };
        let (n, m) = (first.approx.n(), first.approx.m());
        let mut header = vec!["k".to_string(), "r_k".into(), "eps".into(), "osc".into(), "new_eps".into(), "ratio".into()];
        header.extend((0..m).map(|a| format!("b{}", a + 1)));
        header.extend((0..m).flat_map(|a| (0..n).map(move |i| format!("a{}{}", i + 1, a + 1))));
        if self.quadratic {
            header.extend((0..m).flat_map(|a| (0..n).flat_map(move |i| (i..n).map(move |j| format!("q{}_{}{}", a + 1, i + 1, j + 1)))));
        }
        writeln!(w, "{}", header.join(","))?;
        for e in &self.entries {
            let mut row = vec![e.k.to_string(), fmt(e.r_k), fmt(e.eps), fmt(e.osc), fmt(e.new_eps), fmt(e.ratio)];
            row.extend(e.approx.affine.b.iter().map(|v| fmt(*v)));
            row.extend((0..m).flat_map(|a| (0..n).map(move |i| (a, i))).map(|(a, i)| fmt(e.approx.affine.a.entry(i, a))));
            if self.quadratic {
                for q in &e.approx.quad {
                    for i in 0..n {
                        for j in i..n {
                            row.push(fmt(q.get(i, j)));
                        }
                    }
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Iterates the improvement-of-flatness step `steps` times, rescaling by
/// `y ↦ (u(ηy) − b)/η` and re-solving on the standard lattice in between.
///
/// The fitted slope is carried along instead of being rotated away, so every
/// re-solve is an exact rescaling of the previous problem. With
/// `beta = Some(β)` the fits are harmonic quadratics and the ratio is
/// `new_eps/(eps η²)`; the coefficient bound `eps^β` is recorded, not
/// enforced, after the first step.
pub fn flatness_trace(u0: &GridMap, l0: &QuadraticMap, eta: f64, steps: usize, beta: Option<f64>, params: &SolveParams) -> Result<FlatnessTrace> {
    if steps == 0 {
        return Err(invalid("steps", "must be at least 1"));
    }
    if let Some(b) = beta {
        if !(b > 0.5 && b < 1.0) {
            return Err(invalid("beta", format!("{b} is outside (1/2, 1)")));
        }
    }
    let quadratic = beta.is_some();
    let mut u = u0.clone();
    let mut l = l0.clone();
    let mut entries: Vec<TraceEntry> = Vec::new();
    let mut coefficients = Vec::new();
    let mut solve = None;
    for k in 0..steps {
        let radius = u.mask().radius();
        let eps = sup_deviation(&u, radius, |x| l.eval(x));
        if !(eps > 0.0) {
            return Err(Error::PreconditionUnmet(format!("step {k}: map coincides with its approximant")));
        }
        let osc = oscillation(&subtract(&u, |x| l.eval(x))?, radius);
        let approx = if quadratic {
            best_harmonic_fit(&u, eta)?
        } else {
            QuadraticMap::from_affine(improve_flatness_step(&u, &l.affine, eps, eta)?.approx)
        };
        let new_eps = sup_deviation(&u, eta, |x| approx.eval(x));
        let ratio = if quadratic { new_eps / (eps * eta * eta) } else { new_eps / (eps * eta) };
        let slope_change = entries.last().map(|prev| (approx.affine.a.as_matrix() - prev.approx.affine.a.as_matrix()).norm());
        // u_k(y) = u(η^k y)/η^k up to constants, so D²u_k = η^k D²u.
        coefficients.push(approx.max_quadratic_coefficient() / eta.powi(k as i32));
        entries.push(TraceEntry {
            k,
            r_k: eta.powi(k as i32),
            eps,
            osc,
            new_eps,
            ratio,
            tilt: eps * l.affine.slope_norm(),
            approx: approx.clone(),
            slope_change,
            solve: solve.take(),
        });
        if k + 1 == steps {
            break;
        }
        let b = approx.affine.b.clone();
        let mut next = rescale(&u, eta, &b)?;
        let report = solve_dirichlet_warm(&mut next, params)?;
        if !report.converged {
            return Err(Error::NotConverged {
                iterations: report.iterations,
                residual: report.final_sup_residual,
            });
        }
        solve = Some(report);
        u = next;
        l = QuadraticMap {
            affine: AffineMap::new(vec![0.0; b.len()], approx.affine.a.clone())?,
            quad: approx.quad.iter().map(|q| q.scale(eta)).collect(),
        };
    }
    Ok(FlatnessTrace {
        quadratic,
        eta,
        beta,
        entries,
        original_quadratic_coefficients: coefficients,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `"<="` or `">"`.
    pub relation: String,
    pub pass: bool,
}

impl BoundCheck {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            relation: "<=".into(),
            pass: value <= bound,
        }
    }

    pub fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            relation: ">".into(),
            pass: value > bound,
        }
    }

    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Vec<Self> {
        let name = name.into();
        vec![
            Self {
                name: format!("{name} (lower)"),
                value,
                bound: lo,
                relation: ">=".into(),
                pass: value >= lo,
            },
            Self::at_most(format!("{name} (upper)"), value, hi),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job: u64,
    pub error: Option<String>,
    pub data: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: String,
    pub experiment: String,
    pub params: ExperimentParams,
    pub dims: Dims,
    pub points: usize,
    pub seed: u64,
    pub jobs: Vec<JobOutcome>,
    pub constants: BTreeMap<String, f64>,
    pub bounds: Vec<BoundCheck>,
    pub out_of_regime: bool,
    pub pass: bool,
}

impl ExperimentReport {
    pub fn new(experiment: &str, params: ExperimentParams, dims: Dims, points: usize, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION.into(),
            experiment: experiment.into(),
            params,
            dims,
            points,
            seed,
            jobs: Vec::new(),
            constants: BTreeMap::new(),
            bounds: Vec::new(),
            out_of_regime: false,
            pass: false,
        }
    }

    /// Sets `pass`: every bound holds, no job failed, and the run is in regime.
    pub fn finish(mut self) -> Self {
        self.pass = !self.out_of_regime && self.jobs.iter().all(|j| j.error.is_none()) && self.bounds.iter().all(|b| b.pass);
        self
    }
}

/// Runs `jobs` independent jobs in parallel; results come back in job order.
pub fn run_batch<T: Send>(jobs: usize, f: impl Fn(u64) -> Result<T> + Sync) -> Vec<Result<T>> {
    (0..jobs as u64).into_par_iter().map(&f).collect()
}

/// A solved flat problem.
#[derive(Debug, Clone)]
pub struct SolvedProblem {
    pub problem: FlatProblem,
    pub u: GridMap,
    pub report: SolveReport,
}

/// Solves `jobs` seeded problems; `tilted = false` drops the slope of `l`.
pub fn solve_batch(dims: Dims, points: usize, eps: f64, seed: u64, jobs: usize, tilted: bool, params: &SolveParams) -> Vec<Result<SolvedProblem>> {
    run_batch(jobs, |job| {
        let mut problem = FlatProblem::random(dims, points, eps, seed, job)?;
        if !tilted {
            problem = problem.without_tilt();
        }
        let (u, report) = problem.solve(params)?;
        if !report.converged {
            return Err(Error::NotConverged {
                iterations: report.iterations,
                residual: report.final_sup_residual,
            });
        }
        Ok(SolvedProblem { problem, u, report })
    })
}

fn outcome<T: Serialize>(job: u64, r: &Result<T>) -> JobOutcome {
    match r {
        Ok(v) => JobOutcome {
            job,
            error: None,
            data: serde_json::to_value(v).unwrap_or(serde_json::Value::Null),
        },
        Err(e) => JobOutcome {
            job,
            error: Some(e.to_string()),
            data: serde_json::Value::Null,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessJob {
    pub iterations: usize,
    pub trace: FlatnessTrace,
    /// `(η, ratio)` of a single step from the solved map, over [`ETA_SWEEP`].
    pub eta_sweep: Vec<(f64, f64)>,
}

/// Scales tried for the reported admissible range of `η`.
pub const ETA_SWEEP: [f64; 5] = [0.125, 0.1875, 0.25, 0.375, 0.5];

/// Improvement-of-flatness traces over a batch of solved problems. Bounds:
/// every ratio `<= ½(1 + slack)`.
pub fn flatness_experiment(
    solved: &[Result<SolvedProblem>],
    params: &ExperimentParams,
    steps: usize,
    quadratic: bool,
    slack: f64,
    solve_params: &SolveParams,
    seed: u64,
) -> Result<ExperimentReport> {
    let first = first_problem(solved)?;
    let name = if quadratic { "flatness-quadratic" } else { "flatness" };
    let mut report = ExperimentReport::new(name, params.clone(), first.dims, first.points, seed);
    let beta = quadratic.then_some(params.beta);
    let traces: Vec<Result<FlatnessJob>> = solved
        .par_iter()
        .map(|s| {
            let s = s.as_ref().map_err(|e| Error::PreconditionUnmet(format!("solve failed: {e}")))?;
            let l0 = QuadraticMap::from_affine(s.problem.l.clone());
            let trace = flatness_trace(&s.u, &l0, params.eta, steps, beta, solve_params)?;
            let eps = sup_deviation(&s.u, s.u.mask().radius(), |x| l0.eval(x));
            let eta_sweep = ETA_SWEEP
                .iter()
                .map(|&eta| {
                    let (fit, scale) = if quadratic {
                        (best_harmonic_fit(&s.u, eta)?, eta * eta)
                    } else {
                        (QuadraticMap::from_affine(best_affine_fit(&s.u, eta)?), eta)
                    };
                    Ok((eta, sup_deviation(&s.u, eta, |x| fit.eval(x)) / (eps * scale)))
                })
                .collect::<Result<_>>()?;
            Ok(FlatnessJob {
                iterations: s.report.iterations,
                trace,
                eta_sweep,
            })
        })
        .collect();
    let bound = 0.5 * (1.0 + slack);
    let mut max_ratio: f64 = 0.0;
    let mut decaying = 0usize;
    let mut growth: f64 = 0.0;
    let mut admissible = vec![true; ETA_SWEEP.len()];
    for (job, t) in traces.iter().enumerate() {
        report.jobs.push(outcome(job as u64, t));
        if let Ok(t) = t {
            for (ok, (_, r)) in admissible.iter_mut().zip(&t.eta_sweep) {
                *ok &= *r <= bound;
            }
            max_ratio = max_ratio.max(t.trace.max_ratio());
            decaying += usize::from(t.trace.decays_geometrically(slack));
            growth = growth.max(t.trace.coefficient_growth());
        }
    }
    report.constants.insert("max_ratio".into(), max_ratio);
    report.constants.insert("slack".into(), slack);
    let passing: Vec<f64> = ETA_SWEEP.iter().zip(&admissible).filter(|(_, ok)| **ok).map(|(e, _)| *e).collect();
    if let (Some(lo), Some(hi)) = (passing.first(), passing.last()) {
        report.constants.insert("eta_admissible_min".into(), *lo);
        report.constants.insert("eta_admissible_max".into(), *hi);
    }
    report.bounds.push(BoundCheck::at_most("ratio", max_ratio, bound));
    report.bounds.push(BoundCheck {
        name: "traces decaying geometrically".into(),
        value: decaying as f64,
        bound: traces.len() as f64,
        relation: ">=".into(),
        pass: decaying == traces.len(),
    });
    if quadratic {
        report.constants.insert("coefficient_growth".into(), growth);
        report.bounds.push(BoundCheck::at_most("coefficient growth", growth, 2.0));
    }
    if quadratic {
        if let Some(eps0) = params.eps0 {
            report.constants.insert("eps0".into(), eps0);
            report.out_of_regime = params.eps > eps0;
        }
    }
    Ok(report.finish())
}

fn first_problem(solved: &[Result<SolvedProblem>]) -> Result<&FlatProblem> {
    solved
        .iter()
        .find_map(|s| s.as_ref().ok().map(|s| &s.problem))
        .ok_or_else(|| Error::PreconditionUnmet("no problem in the batch was solved".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackJob {
    pub theta: f64,
    pub osc_full: f64,
    pub osc_half: f64,
    pub theta_harmonic: f64,
    pub measure: Option<HarnackMeasureReport>,
}

/// Sweep of `C` used by the measure experiment.
pub const HARNACK_C_SWEEP: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// `θ = 1 − osc_{B_½}(u − l)/osc_{B_1}(u − l)` per job, the same statistic for
/// the harmonic extension of the boundary data, and the `{w > 1 − Cη}`
/// measure sweep. Bound: every `θ > 0`.
pub fn harnack_experiment(solved: &[Result<SolvedProblem>], params: &ExperimentParams, seed: u64) -> Result<ExperimentReport> {
    let first = first_problem(solved)?;
    let mut report = ExperimentReport::new("harnack", params.clone(), first.dims, first.points, seed);
    let jobs: Vec<Result<HarnackJob>> = solved
        .par_iter()
        .map(|s| {
            let s = s.as_ref().map_err(|e| Error::PreconditionUnmet(format!("solve failed: {e}")))?;
            let l = &s.problem.l;
            let w = subtract(&s.u, |x| l.eval(x))?;
            let osc = oscillation(&w, 1.0);
            let d = harnack_decay(&s.u, l, osc)?;
            let h = solve_laplace(s.problem.dims, s.problem.points, &|x| s.problem.boundary(x), 1e-11)?;
            let wh = subtract(&h, |x| l.eval(x))?;
            let theta_harmonic = 1.0 - oscillation(&wh, 0.5) / oscillation(&wh, 1.0);
            Ok(HarnackJob {
                theta: d.theta,
                osc_full: d.osc_full,
                osc_half: d.osc_half,
                theta_harmonic,
                measure: harnack_measure(&s.u, l).ok(),
            })
        })
        .collect();
    let mut theta_min = f64::INFINITY;
    let mut mu: BTreeMap<String, f64> = BTreeMap::new();
    for (job, j) in jobs.iter().enumerate() {
        report.jobs.push(outcome(job as u64, j));
        if let Ok(j) = j {
            theta_min = theta_min.min(j.theta);
            for lv in j.measure.iter().flat_map(|m| &m.levels) {
                let e = mu.entry(format!("mu_at_c_{}", lv.c)).or_insert(0.0);
                *e = e.max(1.0 - lv.measure_fraction);
            }
        }
    }
    report.params.theta = Some(theta_min);
    report.constants.insert("theta_min".into(), theta_min);
    report.constants.extend(mu);
    report.bounds.push(BoundCheck::above("theta_min", theta_min, 0.0));
    Ok(report.finish())
}

/// The measure statistics for `ũ = (u − l)/sup|u − l|`, with `ξ` the
/// direction of the largest `|ũ|` over `B_½` and `η = 1 − |ũ(x₀)|`.
pub fn harnack_measure(u: &GridMap, l: &AffineMap) -> Result<HarnackMeasureReport> {
    let eps = sup_deviation(u, u.mask().radius(), |x| l.eval(x));
    if !(eps > 0.0) {
        return Err(Error::PreconditionUnmet("map coincides with its approximant".into()));
    }
    let (x0, best) = u
        .indices_within(0.5)
        .into_iter()
        .map(|i| {
            let v: Vec<f64> = u.value(i).iter().zip(l.eval(&u.position(i))).map(|(a, b)| (a - b) / eps).collect();
            (i, v)
        })
        .max_by(|a, b| norm(&a.1).total_cmp(&norm(&b.1)))
        .ok_or_else(|| Error::PreconditionUnmet("empty half ball".into()))?;
    let _ = x0;
    let r = norm(&best);
    if !(r > 0.0) {
        return Err(Error::PreconditionUnmet("u = l on the half ball".into()));
    }
    let xi: Vec<f64> = best.iter().map(|v| v / r).collect();
    let eta_small = (1.0 - r).max(1e-6) * (1.0 + 1e-9);
    harnack_measure_experiment(u, l, eps, &xi, eta_small, &HARNACK_C_SWEEP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementLevel {
    pub points: usize,
    pub spacing: f64,
    pub sup_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawsonOssermanCheck {
    pub levels: Vec<RefinementLevel>,
    /// Observed orders between consecutive levels.
    pub orders: Vec<f64>,
    /// `max ||u(x)| − (√5/2)|x||` over the finest lattice.
    pub norm_identity_error: f64,
}

/// Sup of the nondivergence residual over `½ <= |x| <= 1` at each grid level.
pub fn lawson_osserman_check(levels: &[usize], form: ResidualForm) -> Result<LawsonOssermanCheck> {
    if levels.len() < 2 {
        return Err(invalid("levels", "need at least two grid levels"));
    }
    let dims = Dims::new(4, 3)?;
    let mut out = Vec::new();
    let mut identity: f64 = 0.0;
    for &points in levels {
        let u = GridMap::from_fn(dims, points, |x| lawson_osserman(x).to_vec())?;
        let sup = sup_residual(&u, form, |x| norm(x) >= 0.5)?;
        for i in u.mask_indices() {
            let x = u.position(i);
            identity = identity.max((norm(u.value(i)) - 5f64.sqrt() / 2.0 * norm(&x)).abs());
        }
        out.push(RefinementLevel {
            points,
            spacing: u.spacing(),
            sup_residual: sup,
        });
    }
    let orders = out
        .windows(2)
        .map(|w| (w[0].sup_residual / w[1].sup_residual).ln() / (w[0].spacing / w[1].spacing).ln())
        .collect();
    Ok(LawsonOssermanCheck {
        levels: out,
        orders,
        norm_identity_error: identity,
    })
}

pub fn lawson_osserman_experiment(levels: &[usize], seed: u64) -> Result<ExperimentReport> {
    let check = lawson_osserman_check(levels, ResidualForm::Nondivergence)?;
    let mut report = ExperimentReport::new("lawson-osserman", ExperimentParams::default(), Dims::new(4, 3)?, *levels.last().unwrap_or(&0), seed);
    for (k, o) in check.orders.iter().enumerate() {
        report.bounds.extend(BoundCheck::within(format!("order {k}"), *o, 1.8, 2.2));
        report.constants.insert(format!("order_{k}"), *o);
    }
    report.bounds.push(BoundCheck::at_most("norm identity", check.norm_identity_error, 1e-12));
    report.jobs.push(outcome(0, &Ok::<_, Error>(check)));
    Ok(report.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCheck {
    pub affine_ratios: Vec<f64>,
    pub lawson_osserman_ratio: f64,
    pub lawson_osserman_points: usize,
}

/// Density ratios at `r = ½` about the origin for `count` random affine
/// graphs (`dims`, default lattice) and for the Lawson–Osserman graph.
pub fn density_experiment(dims: Dims, points: usize, count: usize, lo_points: usize, seed: u64) -> Result<ExperimentReport> {
    let ratios: Vec<Result<f64>> = run_batch(count, |job| {
        let mut rng = stream_rng(seed, job);
        let l = AffineMap::new(
            (0..dims.m).map(|_| rng.random_range(-0.3..0.3)).collect(),
            Gradient::new(DMatrix::from_fn(dims.n, dims.m, |_, _| rng.random_range(-0.5..0.5))),
        )?;
        let u = GridMap::from_fn(dims, points, |x| l.eval(x))?;
        density_ratio(&u, &vec![0.0; dims.n], 0.5)
    });
    let lo = GridMap::from_fn(Dims::new(4, 3)?, lo_points, |x| lawson_osserman(x).to_vec())?;
    let lo_ratio = density_ratio(&lo, &[0.0; 4], 0.5)?;
    let mut report = ExperimentReport::new("density", ExperimentParams::default(), dims, points, seed);
    let mut worst: f64 = 0.0;
    let mut affine = Vec::new();
    for (job, r) in ratios.iter().enumerate() {
        report.jobs.push(outcome(job as u64, r));
        if let Ok(r) = r {
            worst = worst.max((r - 1.0).abs());
            affine.push(*r);
        }
    }
    report.constants.insert("affine_max_deviation".into(), worst);
    report.constants.insert("lawson_osserman_ratio".into(), lo_ratio);
    report.bounds.push(BoundCheck::at_most("affine |ratio - 1|", worst, 0.05));
    report.bounds.push(BoundCheck::above("lawson-osserman ratio", lo_ratio, 1.0));
    report.jobs.push(outcome(
        count as u64,
        &Ok::<_, Error>(DensityCheck {
            affine_ratios: affine,
            lawson_osserman_ratio: lo_ratio,
            lawson_osserman_points: lo_points,
        }),
    ));
    Ok(report.finish())
}

/// The two sampling densities used for threshold stability.
pub fn threshold_sampling(n: usize, fine: bool, seed: u64) -> impl Fn(&Region) -> SamplingSpec {
    move |region| {
        let mut s = SamplingSpec::standard(region, n, seed);
        s.hx = if fine { 0.05 } else { 0.1 };
        if fine {
            s.hz *= 0.5;
        }
        s
    }
}

/// Bisects the largest `eps` for which the compactness family with analytic
/// `h¹ = x₁² − x₂²` certifies over `{|x| <= ½, |z| <= eps}`.
pub fn l35_threshold(dims: Dims, eta: f64, fine: bool, seed: u64, lo: f64, hi: f64, steps: usize) -> Result<ThresholdSearch> {
    let (n, m) = (dims.n, dims.m);
    let h = saddle(n, m, 1.0)?;
    let sampling = threshold_sampling(n, fine, seed);
    bisect_threshold(lo, hi, steps, |eps| {
        let field = family_l35(HarmonicTerm::Polynomial(h.clone()), &QuadraticMap::zero(n, m), eps, eta)?;
        let region = Region::cylinder(n, m, 0.5, eps);
        certify_region(&field, &region, n, &sampling(&region))
    })
}

/// Bisects the largest `eps` for which the quadratic family with
/// `q¹ = eps^β (x₁² − x₂²)` certifies over `{eps/10 <= |z − q| <= eps, |x| <= ¾}`.
pub fn quadratic_threshold(dims: Dims, beta: f64, fine: bool, seed: u64, lo: f64, hi: f64, steps: usize) -> Result<ThresholdSearch> {
    let (n, m) = (dims.n, dims.m);
    let sampling = threshold_sampling(n, fine, seed);
    bisect_threshold(lo, hi, steps, |eps| {
        let q = saddle(n, m, eps.powf(beta))?;
        let field = family_quadratic(&q, eps, beta, None)?;
        let region = Region::Tube {
            axis: q,
            x_radius: 0.75,
            inner: eps / 10.0,
            outer: eps,
        };
        certify_region(&field, &region, n, &sampling(&region))
    })
}

/// `q¹ = c (x₁² − x₂²)`, other components zero.
pub fn saddle(n: usize, m: usize, c: f64) -> Result<QuadraticMap> {
    let mut quad = vec![SymMatrix::zeros(n); m];
    quad[0] = SymMatrix::from_fn(n, |i, j| match (i, j) {
        (0, 0) => c,
        (1, 1) => -c,
        _ => 0.0,
    });
    QuadraticMap::new(AffineMap::zero(n, m), quad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub family: String,
    pub coarse: ThresholdSearch,
    pub fine: ThresholdSearch,
    /// `|fine − coarse| / coarse` of the two `eps_star` values.
    pub relative_change: Option<f64>,
}

impl ThresholdPair {
    fn new(family: &str, coarse: ThresholdSearch, fine: ThresholdSearch) -> Self {
        let relative_change = match (coarse.eps_star, fine.eps_star) {
            (Some(a), Some(b)) => Some((b - a).abs() / a),
            _ => None,
        };
        Self {
            family: family.into(),
            coarse,
            fine,
            relative_change,
        }
    }
}

/// Bracket and bisection depth for threshold searches.
pub const THRESHOLD_BRACKET: (f64, f64) = (1e-3, 4.0);
pub const THRESHOLD_STEPS: usize = 10;

/// Both empirical thresholds at two sampling densities. Bounds: both
/// searches find a passing `eps`, and the thresholds agree within 20%.
pub fn threshold_experiment(dims: Dims, params: &ExperimentParams, eta_l35: f64, steps: usize, seed: u64) -> Result<ExperimentReport> {
    let (lo, hi) = THRESHOLD_BRACKET;
    let l35 = ThresholdPair::new(
        "l35",
        l35_threshold(dims, eta_l35, false, seed, lo, hi, steps)?,
        l35_threshold(dims, eta_l35, true, seed, lo, hi, steps)?,
    );
    let quad = ThresholdPair::new(
        "quadratic",
        quadratic_threshold(dims, params.beta, false, seed, lo, hi, steps)?,
        quadratic_threshold(dims, params.beta, true, seed, lo, hi, steps)?,
    );
    let mut report = ExperimentReport::new("thresholds", params.clone(), dims, 0, seed);
    for pair in [&l35, &quad] {
        let found = pair.coarse.eps_star.is_some() && pair.fine.eps_star.is_some();
        report.bounds.push(BoundCheck {
            name: format!("{} threshold found", pair.family),
            value: f64::from(u8::from(found)),
            bound: 1.0,
            relation: ">=".into(),
            pass: found,
        });
        if let Some(c) = pair.relative_change {
            report.bounds.push(BoundCheck::at_most(format!("{} threshold stability", pair.family), c, 0.2));
        }
        if let Some(e) = pair.coarse.eps_star {
            report.constants.insert(format!("{}_eps_star", pair.family), e);
        }
        if let Some(e) = pair.fine.eps_star {
            report.constants.insert(format!("{}_eps_star_fine", pair.family), e);
        }
    }
    report.params.eps0 = quad.coarse.eps_star.zip(quad.fine.eps_star).map(|(a, b)| a.min(b));
    if let Some(e0) = report.params.eps0 {
        report.out_of_regime = params.eps > e0;
    }
    report.jobs.push(outcome(0, &Ok::<_, Error>(l35)));
    report.jobs.push(outcome(1, &Ok::<_, Error>(quad)));
    Ok(report.finish())
}

