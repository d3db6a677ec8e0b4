use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {msg}")]
    Config { path: PathBuf, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trace line {line}: {msg}")]
    TraceParse { line: usize, msg: String },

    #[error("trace gap: node {node} has no sample at t={t}")]
    TraceGap { node: u64, t: u64 },

    #[error("feature schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error("input dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("model file line {line}: {msg}")]
    ModelFormat { line: usize, msg: String },

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("simulation ended with {in_flight} packets still in flight; cooldown is too short")]
    InFlightAfterCooldown { in_flight: usize },

    #[error("unknown destination node {0}")]
    UnknownDestination(usize),

    #[error("non-terminal experience without next-decision candidates")]
    MissingCandidates,

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), msg: msg.into() }
    }

    /// Errors caused by user-supplied files or settings rather than by a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidConfig(_)
                | Error::TraceParse { .. }
                | Error::TraceGap { .. }
                | Error::SchemaMismatch { .. }
                | Error::ModelFormat { .. }
        )
    }
}
