use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use msl_core::geometry::Dims;
use msl_core::grid::default_points_per_axis;
use serde::Serialize;

/// Every parameter of a run. Filled from defaults, then the `key = value`
/// config file, then command-line flags; serialized into every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub n: usize,
    pub m: usize,
    /// Points per lattice axis; `None` means the default for `n`.
    pub grid_n: Option<usize>,
    pub seed: u64,
    pub out_dir: String,
    pub eps: Option<f64>,
    pub eta: f64,
    pub beta: f64,
    pub c0: Option<f64>,
    pub eps0: Option<f64>,
    pub l35_eta: f64,
    pub tol_res: f64,
    pub max_iter: usize,
    pub tau: Option<f64>,
    pub monitor_every: usize,
    pub family: String,
    pub boundary: String,
    pub kind: String,
    pub jobs: usize,
    pub trace_steps: usize,
    pub bisect_steps: usize,
    pub count: usize,
    pub bump: f64,
    pub slack: f64,
    pub input: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 2,
            m: 2,
            grid_n: None,
            seed: 0,
            out_dir: "out".into(),
            eps: None,
            eta: 0.25,
            beta: 0.75,
            c0: None,
            eps0: None,
            l35_eta: 0.1,
            tol_res: 1e-8,
            max_iter: 200_000,
            tau: None,
            monitor_every: 0,
            family: "l1".into(),
            boundary: "flat".into(),
            kind: "flatness".into(),
            jobs: 10,
            trace_steps: 3,
            bisect_steps: 10,
            count: 100,
            bump: 0.0,
            slack: 0.2,
            input: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.parse().map_err(|e| format!("bad value {value:?} for {key}: {e}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = key.replace('-', "_");
        let k = key.as_str();
        match k {
            "n" => self.n = parse(k, value)?,
            "m" => self.m = parse(k, value)?,
            "grid_n" => self.grid_n = Some(parse(k, value)?),
            "seed" => self.seed = parse(k, value)?,
            "out_dir" => self.out_dir = value.into(),
            "eps" => self.eps = Some(parse(k, value)?),
            "eta" => self.eta = parse(k, value)?,
            "beta" => self.beta = parse(k, value)?,
            "c0" => self.c0 = Some(parse(k, value)?),
            "eps0" => self.eps0 = Some(parse(k, value)?),
            "l35_eta" => self.l35_eta = parse(k, value)?,
            "tol_res" => self.tol_res = parse(k, value)?,
            "max_iter" => self.max_iter = parse(k, value)?,
            "tau" => self.tau = Some(parse(k, value)?),
            "monitor_every" => self.monitor_every = parse(k, value)?,
            "family" => self.family = value.into(),
            "boundary" => self.boundary = value.into(),
            "kind" => self.kind = value.into(),
            "jobs" => self.jobs = parse(k, value)?,
            "trace_steps" => self.trace_steps = parse(k, value)?,
            "bisect_steps" => self.bisect_steps = parse(k, value)?,
            "count" => self.count = parse(k, value)?,
            "bump" => self.bump = parse(k, value)?,
            "slack" => self.slack = parse(k, value)?,
            "input" => self.input = Some(value.into()),
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Reads `key = value` lines; blank lines and `#` comments are skipped.
    pub fn load(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), no + 1))?;
            self.set(k.trim(), v.trim()).map_err(|e| format!("{}:{}: {e}", path.display(), no + 1))?;
        }
        Ok(())
    }

    pub fn dims(&self) -> Result<Dims, String> {
        Dims::new(self.n, self.m).map_err(|e| e.to_string())
    }

    pub fn points(&self) -> usize {
        self.grid_n.unwrap_or_else(|| default_points_per_axis(self.n))
    }

    pub fn eps_or_default(&self) -> f64 {
        self.eps.unwrap_or(1e-2)
    }

    /// Checks the parameters every command shares.
    pub fn validate(&self) -> Result<(), String> {
        self.dims()?;
        let points = self.points();
        if points < 5 || points % 2 == 0 {
            return Err(format!("grid_n must be odd and at least 5, got {points}"));
        }
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(msg.to_string()) };
        if let Some(eps) = self.eps {
            check(eps > 0.0 && eps.is_finite(), "eps must be positive")?;
        }
        check(self.eta > 0.0 && self.eta < 1.0, "eta must lie in (0, 1)")?;
        check(self.beta > 0.5 && self.beta < 1.0, "beta must lie in (1/2, 1)")?;
        check(self.l35_eta >= 0.0, "l35_eta must be non-negative")?;
        check(self.tol_res > 0.0, "tol_res must be positive")?;
        check(self.max_iter > 0, "max_iter must be positive")?;
        check(self.tau.is_none_or(|t| t > 0.0), "tau must be positive")?;
        check(self.jobs > 0, "jobs must be positive")?;
        check(self.trace_steps > 0, "trace_steps must be positive")?;
        check(self.count > 0, "count must be positive")?;
        check(self.slack >= 0.0, "slack must be non-negative")?;
        check(self.c0.is_none_or(|c| c > 0.0), "c0 must be positive")?;
        Ok(())
    }
}
