//! Error types for each subsystem, plus the process-level exit-code mapping.

use thiserror::Error;

/// Errors from network construction, stepping, and checkpointing.
#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("step size {eta} outside (0, 2)")]
    StepSize { eta: f64 },
    #[error("degenerate state: {0}")]
    Degenerate(String),
    #[error("snapshot mismatch: {0}")]
    SnapshotMismatch(String),
    #[error("checkpoint format error at byte {offset}: {what}")]
    CheckpointFormat { offset: u64, what: String },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors from data sources and dataset ingestion.
#[derive(Debug, Error)]
pub enum StreamError {
    #[error("input vector is not unit norm (|‖x‖ − 1| = {deviation:.3e})")]
    NonUnit { deviation: f64 },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },
    #[error("probe is not a dataset row (empirical targets are defined only on their rows)")]
    ForeignProbe,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors from the spectral engine and bound evaluator.
#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(
        "series not converged within cap: partial sum {partial_sum:.12e}, \
         last relative term {last_rel:.3e} after {terms} terms"
    )]
    Truncation {
        partial_sum: f64,
        last_rel: f64,
        terms: usize,
    },
    #[error("eigenvalue monotonicity violated at block {block}: {lo:.12e} > {hi:.12e} + tol")]
    Monotonicity { block: usize, lo: f64, hi: f64 },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("bound precondition violated: {0}")]
    Precondition(String),
}

/// Errors from experiment orchestration.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(
        "audit violation at step {step}, probe {probe}: {what} \
         (value {value:.6e} exceeds {limit:.6e})"
    )]
    AuditViolation {
        step: u64,
        probe: usize,
        what: String,
        value: f64,
        limit: f64,
    },
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("stream: {0}")]
    Stream(#[from] StreamError),
    #[error("spectrum: {0}")]
    Spectrum(#[from] SpectrumError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Top-level error carrying the documented process exit code
/// (0 ok, 2 config, 3 io, 4 invariant violation, 5 numerical).
#[derive(Debug, Error)]
pub enum ToolError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invariant(String),
    #[error("{0}")]
    Numerical(String),
}

impl ToolError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ToolError::Config(_) => 2,
            ToolError::Io(_) => 3,
            ToolError::Invariant(_) => 4,
            ToolError::Numerical(_) => 5,
        }
    }
}

impl From<NetworkError> for ToolError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Io(_) | NetworkError::CheckpointFormat { .. } => {
                ToolError::Io(e.to_string())
            }
            NetworkError::Dimension(_) | NetworkError::StepSize { .. } => {
                ToolError::Config(e.to_string())
            }
            _ => ToolError::Invariant(e.to_string()),
        }
    }
}

impl From<StreamError> for ToolError {
    fn from(e: StreamError) -> Self {
        match e {
            StreamError::Io(_) | StreamError::Format { .. } => ToolError::Io(e.to_string()),
            StreamError::Dimension(_) => ToolError::Config(e.to_string()),
            _ => ToolError::Invariant(e.to_string()),
        }
    }
}

impl From<SpectrumError> for ToolError {
    fn from(e: SpectrumError) -> Self {
        match e {
            SpectrumError::Domain(_) | SpectrumError::Precondition(_) => {
                ToolError::Config(e.to_string())
            }
            _ => ToolError::Numerical(e.to_string()),
        }
    }
}

impl From<ExperimentError> for ToolError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) => ToolError::Config(e.to_string()),
            ExperimentError::Io(_) => ToolError::Io(e.to_string()),
            ExperimentError::AuditViolation { .. } => ToolError::Invariant(e.to_string()),
            ExperimentError::Network(n) => n.into(),
            ExperimentError::Stream(s) => s.into(),
            ExperimentError::Spectrum(s) => s.into(),
            ExperimentError::Aggregation(_) => ToolError::Invariant(e.to_string()),
        }
    }
}
