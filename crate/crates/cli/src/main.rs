//! `msl`: command-line front end for the msl-core toolkit.
//!
//! Exit codes: 0 success, 1 usage or invalid config, 2 nonconvergence,
//! 3 certification or bound failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "msl", version, about = "Minimal surface system toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the Dirichlet problem and write the grid and solve report.
    Solve(SolveArgs),
    /// Certify a comparison-function family over its region.
    Certify(CertifyArgs),
    /// Run the viscosity touching screen on a solved or loaded grid.
    Screen(ScreenArgs),
    /// Run a batch experiment and write its report and traces.
    Experiment(ExperimentArgs),
    /// Check that output files carry the format version and config.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Points per lattice axis (odd).
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<String>,
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveFlags {
    #[arg(long)]
    tol_res: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    monitor_every: Option<usize>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solve: SolveFlags,
    /// flat | affine | quadratic
    #[arg(long)]
    boundary: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    /// l1 | l35 | quadratic | sphere | neg-sphere
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    l35_eta: Option<f64>,
}

#[derive(Args, Debug)]
struct ScreenArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solve: SolveFlags,
    /// Grid file written by `solve`; without it a flat problem is solved.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    /// Height of a bump added to the first component before screening.
    #[arg(long)]
    bump: Option<f64>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solve: SolveFlags,
    /// flatness | flatness-quadratic | harnack | lawson-osserman | density | thresholds
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long)]
    l35_eta: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    trace_steps: Option<usize>,
    #[arg(long)]
    bisect_steps: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    slack: Option<f64>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// JSON, CSV or grid files to check.
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

type Pairs = Vec<(&'static str, String)>;

fn push<T: ToString>(pairs: &mut Pairs, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        pairs.push((key, v.to_string()));
    }
}

impl Common {
    fn pairs(&self, out: &mut Pairs) {
        push(out, "n", &self.n);
        push(out, "m", &self.m);
        push(out, "grid_n", &self.grid_n);
        push(out, "seed", &self.seed);
        push(out, "out_dir", &self.out_dir);
    }
}

impl SolveFlags {
    fn pairs(&self, out: &mut Pairs) {
        push(out, "tol_res", &self.tol_res);
        push(out, "max_iter", &self.max_iter);
        push(out, "tau", &self.tau);
        push(out, "monitor_every", &self.monitor_every);
    }
}

/// A diagnostic and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn from_core(e: &msl_core::Error) -> Self {
        use msl_core::Error as E;
        let code = match e {
            E::InvalidDims { .. } | E::InvalidParameter { .. } => 1,
            E::NotConverged { .. } | E::Diverged { .. } => 2,
            _ => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }

    pub fn io(e: std::io::Error) -> Self {
        Self {
            code: 3,
            message: e.to_string(),
        }
    }
}

impl From<msl_core::Error> for Failure {
    fn from(e: msl_core::Error) -> Self {
        Self::from_core(&e)
    }
}

fn build_config(common: &Common, mut pairs: Pairs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.load(path).map_err(Failure::usage)?;
    }
    common.pairs(&mut pairs);
    for (k, v) in pairs {
        cfg.set(k, &v).map_err(Failure::usage)?;
    }
    cfg.validate().map_err(Failure::usage)?;
    Ok(cfg)
}

fn usage_of(name: &str) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    cmd.find_subcommand_mut(name).map(|c| c.render_usage().to_string()).unwrap_or_default()
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Solve(a) => {
            let mut p = Pairs::new();
            a.solve.pairs(&mut p);
            push(&mut p, "boundary", &a.boundary);
            push(&mut p, "eps", &a.eps);
            commands::solve(&build_config(&a.common, p)?)
        }
        Command::Certify(a) => {
            let mut p = Pairs::new();
            push(&mut p, "family", &a.family);
            push(&mut p, "eps", &a.eps);
            push(&mut p, "eta", &a.eta);
            push(&mut p, "beta", &a.beta);
            push(&mut p, "c0", &a.c0);
            push(&mut p, "l35_eta", &a.l35_eta);
            let cfg = build_config(&a.common, p)?;
            if cfg.eps.is_none() {
                return Err(Failure::usage(format!("certify needs --eps\n\n{}", usage_of("certify"))));
            }
            commands::certify(&cfg)
        }
        Command::Screen(a) => {
            let mut p = Pairs::new();
            a.solve.pairs(&mut p);
            push(&mut p, "input", &a.input);
            push(&mut p, "eps", &a.eps);
            push(&mut p, "count", &a.count);
            push(&mut p, "bump", &a.bump);
            commands::screen(&build_config(&a.common, p)?)
        }
        Command::Experiment(a) => {
            let mut p = Pairs::new();
            a.solve.pairs(&mut p);
            push(&mut p, "kind", &a.kind);
            push(&mut p, "eps", &a.eps);
            push(&mut p, "eta", &a.eta);
            push(&mut p, "beta", &a.beta);
            push(&mut p, "eps0", &a.eps0);
            push(&mut p, "l35_eta", &a.l35_eta);
            push(&mut p, "jobs", &a.jobs);
            push(&mut p, "trace_steps", &a.trace_steps);
            push(&mut p, "bisect_steps", &a.bisect_steps);
            push(&mut p, "count", &a.count);
            push(&mut p, "slack", &a.slack);
            commands::experiment(&build_config(&a.common, p)?)
        }
        Command::Validate(a) => commands::validate(&a.files),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("msl: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
