//! Flat `key = value` experiment configuration.
//!
//! A config file holds one assignment per line; `#` starts a comment. Lists
//! are comma separated. Command-line overrides use the same syntax and are
//! applied after the file. Any key not listed in [`KEYS`] is rejected.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{LabError, Result};

/// The experiments the runner knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    KernelValidate,
    SmoothingSlopes,
    AronsonFit,
    SelectionProbability,
    Dichotomy,
    MartingaleCheck,
    SmalltimeDecay,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::KernelValidate,
        Experiment::SmoothingSlopes,
        Experiment::AronsonFit,
        Experiment::SelectionProbability,
        Experiment::Dichotomy,
        Experiment::MartingaleCheck,
        Experiment::SmalltimeDecay,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Experiment::KernelValidate => "kernel-validate",
            Experiment::SmoothingSlopes => "smoothing-slopes",
            Experiment::AronsonFit => "aronson-fit",
            Experiment::SelectionProbability => "selection-probability",
            Experiment::Dichotomy => "dichotomy",
            Experiment::MartingaleCheck => "martingale-check",
            Experiment::SmalltimeDecay => "smalltime-decay",
        }
    }
}

impl FromStr for Experiment {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .iter()
            .find(|e| e.id() == s)
            .copied()
            .ok_or_else(|| LabError::Config(format!("unknown experiment '{s}'")))
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Recognized keys, in manifest order.
pub const KEYS: [&str; 23] = [
    "experiment",
    "set",
    "source",
    "noise",
    "alpha",
    "beta",
    "gamma",
    "target",
    "rho",
    "t_end",
    "steps",
    "n_paths",
    "ns",
    "x0",
    "times",
    "grid_n",
    "grid_half_width",
    "time_nodes",
    "kernel_nodes",
    "hermite_nodes",
    "seed",
    "out",
    "workers",
];

/// Everything one run needs. Defaults depend on the experiment; see
/// [`ExperimentConfig::defaults`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Coefficient-set id.
    pub set: String,
    /// Source-term id for the parametrix experiments.
    pub source: String,
    /// `brownian`, `integrated-brownian` or `scaled-brownian:<eps>`.
    pub noise: String,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub gamma: Vec<f64>,
    /// Target probability used to derive `rho` when it is not given.
    pub target: f64,
    pub rho: Option<f64>,
    pub t_end: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub ns: Vec<u64>,
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
    pub grid_n: usize,
    pub grid_half_width: f64,
    pub time_nodes: usize,
    pub kernel_nodes: usize,
    pub hermite_nodes: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; `None` uses the rayon default. Not part of the
    /// reproducibility key.
    pub workers: Option<usize>,
}

fn dyadic(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 2.0_f64.powi(-k)).collect()
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = Self {
            experiment,
            set: "kolmogorov".into(),
            source: "x2".into(),
            noise: "integrated-brownian".into(),
            alpha: vec![0.2],
            beta: 0.5,
            gamma: vec![0.3, 0.5, 1.0],
            target: 0.75,
            rho: None,
            t_end: 1.0,
            steps: 1000,
            n_paths: 10_000,
            ns: vec![4, 16, 64, 256],
            x0: vec![0.3, -0.2],
            times: vec![1e-3, 1e-1, 1.0],
            grid_n: 100,
            grid_half_width: 5.0,
            time_nodes: 32,
            kernel_nodes: 32,
            hermite_nodes: 20,
            seed: 1,
            out: PathBuf::from("out"),
            workers: None,
        };
        match experiment {
            Experiment::KernelValidate => {}
            Experiment::SmoothingSlopes => c.times = dyadic(2, 10),
            Experiment::AronsonFit => {
                c.set = "heterogeneous-demo".into();
                c.times = vec![0.01, 0.1, 1.0];
            }
            Experiment::SelectionProbability => {
                c.x0 = vec![0.01];
                c.steps = 1 << 16;
            }
            Experiment::Dichotomy => {
                c.alpha = vec![0.2, 0.45];
                c.steps = 1 << 12;
            }
            Experiment::MartingaleCheck => {
                c.x0 = vec![0.5, -0.25];
                c.n_paths = 100_000;
                c.steps = 200;
                c.times = vec![0.25, 0.5, 1.0];
                c.time_nodes = 8;
                c.kernel_nodes = 8;
                c.hermite_nodes = 4;
            }
            Experiment::SmalltimeDecay => {
                c.times = dyadic(1, 6);
                c.grid_n = 5;
                c.grid_half_width = 1.0;
                c.time_nodes = 16;
                c.kernel_nodes = 16;
                c.hermite_nodes = 8;
            }
        }
        c
    }

    /// Builds a config for `experiment` from optional file text and ordered
    /// overrides. An `experiment` key in the file must agree with the
    /// requested one; with `experiment = None` the file must supply it.
    pub fn from_sources(
        experiment: Option<Experiment>,
        file: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(text) = file {
            pairs.extend(parse_pairs(text)?);
        }
        pairs.extend(overrides.iter().cloned());
        let mut named = None;
        for (k, v) in &pairs {
            if k == "experiment" {
                named = Some(v.parse::<Experiment>()?);
            }
        }
        let experiment = match (experiment, named) {
            (Some(a), Some(b)) if a != b => {
                return Err(LabError::Config(format!(
                    "config names experiment '{b}' but '{a}' was requested"
                )))
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(LabError::Config("no experiment given".into())),
        };
        let mut cfg = Self::defaults(experiment);
        for (k, v) in &pairs {
            cfg.set_key(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Assigns one key. Unknown keys and unparsable values are config errors.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "experiment" => {
                let e: Experiment = v.parse()?;
                if e != self.experiment {
                    return Err(LabError::Config(format!("experiment cannot change to '{e}'")));
                }
            }
            "set" => self.set = v.to_string(),
            "source" => self.source = v.to_string(),
            "noise" => self.noise = v.to_string(),
            "alpha" => self.alpha = list(key, v)?,
            "beta" => self.beta = scalar(key, v)?,
            "gamma" => self.gamma = list(key, v)?,
            "target" => self.target = scalar(key, v)?,
            "rho" => self.rho = if v == "auto" { None } else { Some(scalar(key, v)?) },
            "t_end" | "T" => self.t_end = scalar(key, v)?,
            "steps" => self.steps = scalar(key, v)?,
            "n_paths" => self.n_paths = scalar(key, v)?,
            "ns" => self.ns = list(key, v)?,
            "x0" => self.x0 = list(key, v)?,
            "times" => self.times = list(key, v)?,
            "grid_n" => self.grid_n = scalar(key, v)?,
            "grid_half_width" => self.grid_half_width = scalar(key, v)?,
            "time_nodes" => self.time_nodes = scalar(key, v)?,
            "kernel_nodes" => self.kernel_nodes = scalar(key, v)?,
            "hermite_nodes" => self.hermite_nodes = scalar(key, v)?,
            "seed" => self.seed = scalar(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "workers" => self.workers = Some(scalar(key, v)?),
            _ => return Err(LabError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parameter domains. Failures are config errors (exit code 2).
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::Config(msg));
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a > -1.0 && *a < 1.0)) {
            return bad(format!("alpha values must lie in (-1, 1): {:?}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta={} must lie in (0, 1)", self.beta));
        }
        if self.gamma.is_empty() || self.gamma.iter().any(|g| !(*g > 0.0 && *g <= 1.0)) {
            return bad(format!("gamma values must lie in (0, 1]: {:?}", self.gamma));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return bad(format!("target={} must lie in (0, 1)", self.target));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return bad(format!("rho={rho} must be positive"));
            }
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end={} must be positive", self.t_end));
        }
        if self.steps == 0 || self.n_paths < 2 {
            return bad("need steps >= 1 and n_paths >= 2".into());
        }
        if self.ns.is_empty() || self.ns.contains(&0) {
            return bad(format!("ns must be positive integers: {:?}", self.ns));
        }
        if self.x0.is_empty() || self.x0.iter().any(|v| !v.is_finite()) {
            return bad("x0 must be a nonempty list of finite numbers".into());
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad(format!("times must be positive: {:?}", self.times));
        }
        if self.grid_n < 2 || !(self.grid_half_width > 0.0) {
            return bad("need grid_n >= 2 and grid_half_width > 0".into());
        }
        if self.time_nodes == 0 || self.kernel_nodes == 0 || self.hermite_nodes == 0 {
            return bad("quadrature orders must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        Ok(())
    }

    /// Canonical `key = value` listing of every reproducibility-relevant
    /// key, used for the manifest and the input hash. `workers` is left out
    /// on purpose: outputs do not depend on it.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let value = match key {
                "experiment" => self.experiment.id().to_string(),
                "set" => self.set.clone(),
                "source" => self.source.clone(),
                "noise" => self.noise.clone(),
                "alpha" => join(&self.alpha),
                "beta" => fmt_f64(self.beta),
                "gamma" => join(&self.gamma),
                "target" => fmt_f64(self.target),
                "rho" => self.rho.map_or("auto".into(), fmt_f64),
                "t_end" => fmt_f64(self.t_end),
                "steps" => self.steps.to_string(),
                "n_paths" => self.n_paths.to_string(),
                "ns" => self.ns.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
                "x0" => join(&self.x0),
                "times" => join(&self.times),
                "grid_n" => self.grid_n.to_string(),
                "grid_half_width" => fmt_f64(self.grid_half_width),
                "time_nodes" => self.time_nodes.to_string(),
                "kernel_nodes" => self.kernel_nodes.to_string(),
                "hermite_nodes" => self.hermite_nodes.to_string(),
                "seed" => self.seed.to_string(),
                "out" => continue,
                "workers" => continue,
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| LabError::Config(format!("cannot parse '{v}' for key '{key}'")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| scalar(key, p.trim())).collect()
}

/// Splits `key = value` lines, dropping comments and blank lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| LabError::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a single `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("override '{s}' is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
