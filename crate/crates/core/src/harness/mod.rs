//! Experiment runner: configuration, dispatch, CSV tables and run manifests.
//!
//! Every experiment computes all of its tables in memory first and only then
//! creates the output directory, so a run that fails validation or numerics
//! before that point leaves no files behind. Floats are written with
//! `{:.16e}` (17 significant digits) so every value parses back exactly.
//!
//! Output files, all under `out`:
//!
//! | experiment | file | columns |
//! |---|---|---|
//! | kernel-validate | `kernel-validate.csv` | `set, t, s, normalization, norm_error, mean_residual, closed_form_error, quadrature_rel_diff, determinant` |
//! | | `kernel.csv` | `t, s, x_0…, y_0…, q, dq_dx1_k…, dq_dx2_k…, dq_dy1_k…` |
//! | | `validation.csv` | `check, passed, worst_ratio, worst_probe, detail` |
//! | smoothing-slopes | `smoothing-slopes.csv` | `gamma, i, h, value` |
//! | | `smoothing-slopes_fit.csv` | `gamma, i, slope, expected, abs_error` |
//! | aronson-fit | `aronson-fit.csv` | `h, c, big_c, critical_c, grid_points` |
//! | selection-probability, dichotomy | `<id>.csv` | `alpha, gamma, x0, rho, estimate, stderr, n_paths, steps, seed` |
//! | martingale-check | `martingale-check.csv` | `t, deviation, stderr, n_paths, within_3se` |
//! | smalltime-decay | `smalltime-decay.csv` | `t_end, sup_d1u, sup_d2u, sup_d11u, holder_d1u` |
//! | | `smalltime-decay_slopes.csv` | `norm, slope` (empty when the norm vanishes) |
//!
//! In the dichotomy table `rho` holds the horizon `T` and `x0 = 1/n`, with
//! `x0 = 0` for the symmetric control. Every run also writes `manifest.txt`.

mod config;

pub use config::{parse_override, parse_pairs, Experiment, ExperimentConfig, KEYS};

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::coefficients::{halton_probes, validate, CoefficientSet};
use crate::counterexample::{dichotomy_experiment, lemma_rho, selection_probability_task, EnvelopeParams};
use crate::error::{LabError, Result};
use crate::gaussian_kernel::{
    critical_c, density_derivative, dominating_bound_fit, kernel_params, normalization_integral,
    smoothing_probe, solve_transport, DerivativeOrders, TRANSPORT_TOL,
};
use crate::parametrix::{
    martingale_check, smalltime_decay_probe, GridBox, ParametrixConfig, QuadratureConfig, SourceTerm,
};
use crate::rng::RNG_ALGORITHM;
use crate::sde_sim::NoiseModel;
use crate::stats::loglog_slope;

/// A CSV table held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: impl Into<String>, header: &[&str]) -> Self {
        Self {
            file: file.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner()
            .map_err(|e| LabError::Io(std::io::Error::other(e.to_string())))
    }
}

/// 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{:.16e}", v + 0.0)
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), num)
}

/// What a completed run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub experiment: Experiment,
    pub files: Vec<PathBuf>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
    /// Git-style content hash of the canonical config.
    pub input_hash: String,
    /// Set when an experiment's built-in check failed; files are still
    /// written so the failure can be inspected.
    pub failure: Option<String>,
}

/// Computed tables plus summary, before anything touches the disk.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: Vec<String>,
    pub failure: Option<String>,
}

/// `sha256` of `"blob <len>\0" + content`, as git hashes objects.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    let mut s = String::from("sha256:");
    for b in h.finalize().iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Parses `brownian`, `integrated-brownian` or `scaled-brownian:<eps>`.
pub fn noise_from_id(id: &str) -> Result<NoiseModel> {
    match id {
        "brownian" => Ok(NoiseModel::brownian()),
        "integrated-brownian" => Ok(NoiseModel::integrated_brownian()),
        _ => {
            let eps = id
                .strip_prefix("scaled-brownian:")
                .and_then(|e| e.parse::<f64>().ok())
                .ok_or_else(|| LabError::Config(format!("unknown noise '{id}'")))?;
            NoiseModel::scaled_brownian(eps).map_err(|e| LabError::Config(e.to_string()))
        }
    }
}

/// Runs the experiment and writes its tables and manifest. A failed
/// built-in check is reported as [`LabError::CheckFailed`] after writing.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let outcome = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| LabError::Config(format!("cannot build worker pool: {e}")))?
            .install(|| compute(cfg))?,
        None => compute(cfg)?,
    };
    let report = write_outputs(cfg, outcome)?;
    if let Some(msg) = &report.failure {
        return Err(LabError::CheckFailed(msg.clone()));
    }
    Ok(report)
}

/// Computes the experiment's tables without writing anything.
pub fn compute(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.experiment {
        Experiment::KernelValidate => kernel_validate(cfg),
        Experiment::SmoothingSlopes => smoothing_slopes(cfg),
        Experiment::AronsonFit => aronson_fit(cfg),
        Experiment::SelectionProbability => selection(cfg),
        Experiment::Dichotomy => dichotomy(cfg),
        Experiment::MartingaleCheck => martingale(cfg),
        Experiment::SmalltimeDecay => decay(cfg),
    }
}

/// Writes the tables and `manifest.txt`.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: Outcome) -> Result<RunReport> {
    let canonical = cfg.canonical();
    let input_hash = content_hash(canonical.as_bytes());
    let mut blobs = Vec::new();
    for t in &outcome.tables {
        blobs.push((t.file.clone(), t.to_bytes()?));
    }
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# hypolab run manifest");
    let _ = writeln!(manifest, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "rng = {RNG_ALGORITHM}");
    let _ = writeln!(manifest, "seed = {}", cfg.seed);
    let _ = writeln!(manifest, "input_hash = {input_hash}");
    let _ = writeln!(manifest, "\n[config]\n{canonical}");
    let _ = writeln!(manifest, "[outputs]");
    for (name, bytes) in &blobs {
        let _ = writeln!(manifest, "{name} {}", content_hash(bytes));
    }
    if let Some(f) = &outcome.failure {
        let _ = writeln!(manifest, "\n[failure]\n{f}");
    }

    fs::create_dir_all(&cfg.out)?;
    let mut files = Vec::new();
    for (name, bytes) in blobs {
        let path = cfg.out.join(name);
        fs::write(&path, bytes)?;
        files.push(path);
    }
    let path = cfg.out.join("manifest.txt");
    fs::write(&path, manifest)?;
    files.push(path);
    Ok(RunReport {
        experiment: cfg.experiment,
        files,
        summary: outcome.summary,
        input_hash,
        failure: outcome.failure,
    })
}

fn coefficient_set(cfg: &ExperimentConfig) -> Result<CoefficientSet> {
    CoefficientSet::from_id(&cfg.set)
}

fn start_point(cfg: &ExperimentConfig, cs: &CoefficientSet) -> Result<Vec<f64>> {
    if cfg.x0.len() != cs.state_dim() {
        return Err(LabError::Config(format!(
            "x0 has {} entries but set '{}' has state dimension {}",
            cfg.x0.len(),
            cfg.set,
            cs.state_dim()
        )));
    }
    Ok(cfg.x0.clone())
}

fn kernel_validate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let cs = coefficient_set(cfg)?;
    let x = start_point(cfg, &cs)?;
    let d = cs.d();
    let closed_form = cfg.set.starts_with("kolmogorov");
    let mut main = Table::new(
        "kernel-validate.csv",
        &[
            "set",
            "t",
            "s",
            "normalization",
            "norm_error",
            "mean_residual",
            "closed_form_error",
            "quadrature_rel_diff",
            "determinant",
        ],
    );
    let mut header: Vec<String> = vec!["t".into(), "s".into()];
    header.extend((0..2 * d).map(|k| format!("x_{k}")));
    header.extend((0..2 * d).map(|k| format!("y_{k}")));
    header.push("q".into());
    for block in ["x1", "x2", "y1"] {
        header.extend((0..d).map(|k| format!("dq_d{block}_{k}")));
    }
    let mut kernel = Table {
        file: "kernel.csv".into(),
        header,
        rows: Vec::new(),
    };
    let mut failures = Vec::new();
    let horizon = cfg.times.iter().cloned().fold(0.0, f64::max);
    let flow = solve_transport(&cs, 0.0, &x, horizon, TRANSPORT_TOL)?;
    for &h in &cfg.times {
        let p = kernel_params(&cs, &flow, 0.0, h, &x)?;
        let norm = normalization_integral(&p, cfg.hermite_nodes);
        let theta = flow.eval(h);
        let mean = p.mean();
        let scale = theta.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let residual = (0..2 * d).fold(0.0_f64, |m, k| m.max((mean[k] - theta[k]).abs())) / scale;
        let cf = closed_form.then(|| {
            let blocks = [(&p.sigma11, h), (&p.sigma12, h * h / 2.0), (&p.sigma22, h.powi(3) / 3.0)];
            let mut worst: f64 = 0.0;
            for (m, v) in blocks {
                for i in 0..d {
                    for j in 0..d {
                        let target = if i == j { v } else { 0.0 };
                        worst = worst.max((m[(i, j)] - target).abs() / v);
                    }
                }
            }
            worst
        });
        if !((norm - 1.0).abs() <= 1e-8) {
            failures.push(format!("normalization {norm} at h={h}"));
        }
        if !(residual <= 1e-8) {
            failures.push(format!("mean/transport residual {residual:e} at h={h}"));
        }
        if let Some(e) = cf {
            if !(e <= 1e-10) {
                failures.push(format!("closed-form covariance error {e:e} at h={h}"));
            }
        }
        main.push(vec![
            cfg.set.clone(),
            num(0.0),
            num(h),
            num(norm),
            num((norm - 1.0).abs()),
            num(residual),
            opt(cf),
            opt(p.quadrature_rel_diff),
            num(p.determinant()),
        ]);

        // Kernel samples at the mean and one standard deviation along each
        // Cholesky direction.
        let l = p.chol();
        let mut ys = vec![mean.as_slice().to_vec()];
        for k in 0..2 * d {
            for sgn in [-1.0, 1.0] {
                ys.push((0..2 * d).map(|i| mean[i] + sgn * l[(i, k)]).collect());
            }
        }
        for y in ys {
            let mut row = vec![num(0.0), num(h)];
            row.extend(x.iter().map(|v| num(*v)));
            row.extend(y.iter().map(|v| num(*v)));
            row.push(num(p.density(&y)));
            for orders in [
                DerivativeOrders::new(1, 0, 0),
                DerivativeOrders::new(0, 1, 0),
                DerivativeOrders::new(0, 0, 1),
            ] {
                let t = density_derivative(&p, &y, orders)?;
                row.extend(t.data.iter().map(|v| num(*v)));
            }
            kernel.push(row);
        }
    }

    let lo = vec![-2.0; 2 * d];
    let hi = vec![2.0; 2 * d];
    let report = validate(&cs, &halton_probes(256, (0.0, 1.0), &lo, &hi))?;
    let mut checks = Table::new("validation.csv", &["check", "passed", "worst_ratio", "worst_probe", "detail"]);
    for c in &report.checks {
        checks.push(vec![
            c.name.to_string(),
            c.passed.to_string(),
            num(c.worst_ratio),
            c.worst_probe.to_string(),
            c.detail.clone(),
        ]);
    }

    let mut summary = vec![format!(
        "kernel-validate on '{}': {} horizons, {} coefficient checks passed of {}",
        cfg.set,
        cfg.times.len(),
        report.checks.iter().filter(|c| c.passed).count(),
        report.checks.len()
    )];
    if failures.is_empty() {
        summary.push("kernel checks: pass".into());
    }
    Ok(Outcome {
        tables: vec![main, kernel, checks],
        summary,
        failure: (!failures.is_empty()).then(|| failures.join("; ")),
    })
}

fn smoothing_slopes(cfg: &ExperimentConfig) -> Result<Outcome> {
    let cs = coefficient_set(cfg)?;
    let x = start_point(cfg, &cs)?;
    let mut values = Table::new("smoothing-slopes.csv", &["gamma", "i", "h", "value"]);
    let mut fits = Table::new("smoothing-slopes_fit.csv", &["gamma", "i", "slope", "expected", "abs_error"]);
    let mut summary = Vec::new();
    for &gamma in &cfg.gamma {
        for i in 1..=2 {
            let pts = smoothing_probe(&cs, &x, gamma, i, &cfg.times)?;
            for &(h, v) in &pts {
                values.push(vec![num(gamma), i.to_string(), num(h), num(v)]);
            }
            let slope = loglog_slope(&pts)?;
            let expected = (i as f64 - 0.5) * gamma;
            fits.push(vec![
                num(gamma),
                i.to_string(),
                num(slope),
                num(expected),
                num((slope - expected).abs()),
            ]);
            summary.push(format!("gamma={gamma} i={i}: slope {slope:.4} (expected {expected:.4})"));
        }
    }
    Ok(Outcome {
        tables: vec![values, fits],
        summary,
        failure: None,
    })
}

fn aronson_fit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let cs = coefficient_set(cfg)?;
    let x = start_point(cfg, &cs)?;
    let dim = cs.state_dim();
    let total = (cfg.grid_n as f64).powi(dim as i32);
    if total > 4e6 {
        return Err(LabError::Config(format!(
            "grid_n^{dim} = {total:e} points is too many; lower grid_n"
        )));
    }
    let horizon = cfg.times.iter().cloned().fold(0.0, f64::max);
    let flow = solve_transport(&cs, 0.0, &x, horizon, TRANSPORT_TOL)?;
    let mut table = Table::new("aronson-fit.csv", &["h", "c", "big_c", "critical_c", "grid_points"]);
    let mut summary = Vec::new();
    for &h in &cfg.times {
        let p = kernel_params(&cs, &flow, 0.0, h, &x)?;
        let mean = p.mean();
        let cov = p.covariance();
        let axes = (0..dim)
            .map(|k| {
                let w = cfg.grid_half_width * cov[(k, k)].sqrt();
                (mean[k] - w, mean[k] + w, cfg.grid_n)
            })
            .collect();
        let grid = GridBox::new(axes)?.points();
        let fit = dominating_bound_fit(&cs, &flow, 0.0, h, &x, &grid)?;
        table.push(vec![
            num(h),
            num(fit.c),
            num(fit.big_c),
            num(critical_c(&p)),
            grid.len().to_string(),
        ]);
        summary.push(format!("h={h}: C={:.4} c={:.4}", fit.big_c, fit.c));
    }
    Ok(Outcome {
        tables: vec![table],
        summary,
        failure: None,
    })
}

const COUNTER_HEADER: [&str; 9] = ["alpha", "gamma", "x0", "rho", "estimate", "stderr", "n_paths", "steps", "seed"];

fn selection(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = noise_from_id(&cfg.noise)?;
    let gamma = model.gamma();
    let mut table = Table::new("selection-probability.csv", &COUNTER_HEADER);
    let mut summary = Vec::new();
    let mut task = 0;
    for &alpha in &cfg.alpha {
        let env = EnvelopeParams::new(alpha, cfg.beta).map_err(|e| LabError::Config(e.to_string()))?;
        let rho = match cfg.rho {
            Some(r) => r,
            None => lemma_rho(&env, gamma, model.abs_moment(), cfg.target)?,
        };
        for &x0 in &cfg.x0 {
            let est = selection_probability_task(&env, model, x0, rho, cfg.n_paths, cfg.steps, cfg.seed, task)?;
            task += 1;
            table.push(vec![
                num(alpha),
                num(gamma),
                num(x0),
                num(rho),
                num(est.estimate),
                num(est.stderr),
                cfg.n_paths.to_string(),
                cfg.steps.to_string(),
                cfg.seed.to_string(),
            ]);
            summary.push(format!(
                "alpha={alpha} x0={x0} rho={rho:.4e}: P(tau >= rho) = {:.4} ± {:.4}",
                est.estimate, est.stderr
            ));
        }
    }
    Ok(Outcome {
        tables: vec![table],
        summary,
        failure: None,
    })
}

fn dichotomy(cfg: &ExperimentConfig) -> Result<Outcome> {
    let model = noise_from_id(&cfg.noise)?;
    let t = dichotomy_experiment(&cfg.alpha, model, &cfg.ns, cfg.t_end, cfg.n_paths, cfg.steps, cfg.seed)?;
    let mut table = Table::new("dichotomy.csv", &COUNTER_HEADER);
    let mut summary = Vec::new();
    for r in &t.rows {
        table.push(vec![
            num(r.alpha),
            num(t.gamma),
            num(r.x0),
            num(t.t_end),
            num(r.estimate.estimate),
            num(r.estimate.stderr),
            r.estimate.n_paths.to_string(),
            t.steps.to_string(),
            cfg.seed.to_string(),
        ]);
        let label = r.n.map_or("control".to_string(), |n| format!("n={n}"));
        summary.push(format!(
            "alpha={} {label}: P(X_T > 0) = {:.4} ± {:.4}",
            r.alpha, r.estimate.estimate, r.estimate.stderr
        ));
    }
    Ok(Outcome {
        tables: vec![table],
        summary,
        failure: None,
    })
}

fn parametrix_config(cfg: &ExperimentConfig) -> ParametrixConfig {
    ParametrixConfig {
        outer: QuadratureConfig {
            time_nodes: cfg.time_nodes,
            kernel_nodes: cfg.kernel_nodes,
            hermite_nodes: cfg.hermite_nodes,
            ..ParametrixConfig::default().outer
        },
        ..ParametrixConfig::default()
    }
}

fn martingale(cfg: &ExperimentConfig) -> Result<Outcome> {
    let cs = coefficient_set(cfg)?;
    let x = start_point(cfg, &cs)?;
    let f = SourceTerm::from_id(&cfg.source)?;
    let rows = martingale_check(
        &cs,
        &f,
        cfg.t_end,
        &x,
        cfg.n_paths,
        cfg.steps,
        &cfg.times,
        cfg.seed,
        &parametrix_config(cfg),
    )?;
    let mut table = Table::new("martingale-check.csv", &["t", "deviation", "stderr", "n_paths", "within_3se"]);
    let mut summary = Vec::new();
    for r in &rows {
        table.push(vec![
            num(r.t),
            num(r.deviation),
            num(r.stderr),
            r.n_paths.to_string(),
            r.within(3.0).to_string(),
        ]);
        summary.push(format!("t={}: deviation {:.3e} (stderr {:.3e})", r.t, r.deviation, r.stderr));
    }
    Ok(Outcome {
        tables: vec![table],
        summary,
        failure: None,
    })
}

fn decay(cfg: &ExperimentConfig) -> Result<Outcome> {
    let cs = coefficient_set(cfg)?;
    let f = SourceTerm::from_id(&cfg.source)?;
    let grid = GridBox::cube(cs.state_dim(), -cfg.grid_half_width, cfg.grid_half_width, cfg.grid_n)?;
    let table = smalltime_decay_probe(&cs, &f, &cfg.times, &grid, &parametrix_config(cfg))?;
    let mut rows = Table::new(
        "smalltime-decay.csv",
        &["t_end", "sup_d1u", "sup_d2u", "sup_d11u", "holder_d1u"],
    );
    for r in &table.rows {
        rows.push(vec![
            num(r.t_end),
            num(r.sup_d1u),
            num(r.sup_d2u),
            num(r.sup_d11u),
            num(r.holder_d1u),
        ]);
    }
    let mut slopes = Table::new("smalltime-decay_slopes.csv", &["norm", "slope"]);
    let names = ["sup_d1u", "sup_d2u", "sup_d11u", "holder_d1u"];
    let mut summary = vec![format!("Hölder exponent nu = {}", table.nu)];
    for (name, s) in names.iter().zip(table.slopes) {
        slopes.push(vec![name.to_string(), opt(s)]);
        summary.push(match s {
            Some(v) => format!("{name}: slope {v:.4}"),
            None => format!("{name}: vanishes"),
        });
    }
    Ok(Outcome {
        tables: vec![rows, slopes],
        summary,
        failure: None,
    })
}
