use thiserror::Error;

/// Errors produced by the numerical routines and the experiment runner.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("non-finite {what} at probe {probe}: t={t}, x={x:?}")]
    Evaluation {
        what: &'static str,
        probe: usize,
        t: f64,
        x: Vec<f64>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("covariance is degenerate: {0}")]
    Degenerate(String),

    #[error("step size underflow at t={t} (h={h:e}); the transport ODE looks stiff")]
    Stiffness { t: f64, h: f64 },

    #[error("derivative order {0} is not supported (max 2 per variable)")]
    UnsupportedOrder(usize),

    #[error("block dimension d={0} is not supported by this operation")]
    UnsupportedDimension(usize),

    #[error("no dominating constant on the ladder works: {0}")]
    FitFailure(String),

    #[error("time grid is not strictly increasing at index {0}")]
    Grid(usize),

    #[error("state became non-finite at step {index} (t={t})")]
    BlowUp { index: usize, t: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("alpha={alpha} is not below the threshold 1-1/gamma for gamma={gamma} (delta={delta})")]
    AboveThreshold { alpha: f64, gamma: f64, delta: f64 },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    /// Process exit code used by the CLI: 2 for configuration problems,
    /// 4 for I/O, 3 for every numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Io(_) | LabError::Csv(_) => 4,
            _ => 3,
        }
    }
}
