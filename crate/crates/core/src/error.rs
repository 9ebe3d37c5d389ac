//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HireError>;

#[derive(Debug, Error)]
pub enum HireError {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A per-shard or per-group quota does not divide evenly.
    #[error("{what} = {value} is not divisible by {name} = {divisor}")]
    Divisibility {
        what: &'static str,
        value: usize,
        name: &'static str,
        divisor: usize,
    },

    #[error("shard {shard} has width {width}, smaller than per-shard quota {quota}")]
    ShardUnderflow {
        shard: usize,
        width: usize,
        quota: usize,
    },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("allocation of {bytes} bytes failed")]
    Allocation { bytes: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HireError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        HireError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            HireError::Io(_) | HireError::Format(_) | HireError::Allocation { .. } => 2,
            HireError::NonConvergence { .. } | HireError::NonFinite { .. } | HireError::Verification(_) => 3,
            _ => 1,
        }
    }
}
