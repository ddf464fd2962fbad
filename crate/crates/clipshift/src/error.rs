//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how a caller should react: bad inputs are
/// programming/config mistakes, `Numerical`/`Divergence` carry the step at
/// which an iterative run broke down, and `NonConvergence` reports a solver
/// that ran out of budget together with its last residual.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),

    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: u64, message: String },

    #[error("iterate diverged at step {step} (norm {norm:.3e} exceeds {limit:.1e})")]
    Divergence { step: u64, norm: f64, limit: f64 },

    #[error("did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("calibration precondition violated: {0}")]
    Calibration(String),

    #[error("degenerate regime: {0}")]
    DegenerateRegime(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code category used by the command-line frontend:
    /// 2 = config/input error, 3 = numerical failure, 4 = i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::Unsupported(_)
            | Error::UnsupportedConfig(_)
            | Error::Calibration(_)
            | Error::Precondition(_)
            | Error::Config(_) => 2,
            Error::Numerical { .. }
            | Error::Divergence { .. }
            | Error::NonConvergence { .. }
            | Error::DegenerateRegime(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}
