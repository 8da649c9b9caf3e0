use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hypolab::harness::{parse_override, run, Experiment, ExperimentConfig};
use hypolab::LabError;

#[derive(Parser, Debug)]
#[command(name = "hypolab", version, about = "Experiments on degenerate SDEs with Hölder drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Coefficient-set id (kolmogorov, kolmogorov-d2, heterogeneous-demo, peano:<alpha>).
    #[arg(long = "set")]
    set: Option<String>,
    /// Extra `key=value` overrides, applied last.
    #[arg(short = 'D', value_name = "KEY=VALUE")]
    define: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form covariance, normalization and transport checks.
    KernelValidate(Common),
    /// Log-log slopes of the smoothing probe.
    SmoothingSlopes(Common),
    /// Fit of the Gaussian domination constants.
    AronsonFit(Common),
    /// Monte Carlo `P(tau >= rho)` for the perturbed Peano equation.
    SelectionProbability(Common),
    /// `P(X_T > 0)` from `x0 = 1/n` below and above the threshold.
    Dichotomy(Common),
    /// Constant-mean check of the parametrix martingale.
    MartingaleCheck(Common),
    /// Small-horizon decay of the derivative fields.
    SmalltimeDecay(Common),
    /// Run the experiment named by the `experiment` key of the config.
    Run(Common),
}

fn build(command: Command) -> Result<ExperimentConfig, LabError> {
    let (experiment, common) = match command {
        Command::KernelValidate(c) => (Some(Experiment::KernelValidate), c),
        Command::SmoothingSlopes(c) => (Some(Experiment::SmoothingSlopes), c),
        Command::AronsonFit(c) => (Some(Experiment::AronsonFit), c),
        Command::SelectionProbability(c) => (Some(Experiment::SelectionProbability), c),
        Command::Dichotomy(c) => (Some(Experiment::Dichotomy), c),
        Command::MartingaleCheck(c) => (Some(Experiment::MartingaleCheck), c),
        Command::SmalltimeDecay(c) => (Some(Experiment::SmalltimeDecay), c),
        Command::Run(c) => (None, c),
    };
    let text = match &common.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| {
            LabError::Config(format!("cannot read config {}: {e}", p.display()))
        })?),
        None => None,
    };
    let mut overrides = Vec::new();
    if let Some(s) = common.seed {
        overrides.push(("seed".to_string(), s.to_string()));
    }
    if let Some(o) = &common.out {
        overrides.push(("out".to_string(), o.display().to_string()));
    }
    if let Some(w) = common.workers {
        overrides.push(("workers".to_string(), w.to_string()));
    }
    if let Some(s) = &common.set {
        overrides.push(("set".to_string(), s.clone()));
    }
    for d in &common.define {
        overrides.push(parse_override(d)?);
    }
    ExperimentConfig::from_sources(experiment, text.as_deref(), &overrides)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(cli.command).and_then(|cfg| run(&cfg));
    match result {
        Ok(report) => {
            for line in &report.summary {
                println!("{line}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            println!("input hash {}", report.input_hash);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hypolab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
