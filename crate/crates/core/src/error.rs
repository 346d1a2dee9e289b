//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by simulator components.
///
/// The three variants map onto the CLI exit codes: validation and structural
/// problems exit with 2, infeasibility with 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition (bad value, bad config).
    #[error("validation error: {0}")]
    Validation(String),

    /// Inputs are internally inconsistent (mismatched lengths, stale plans).
    #[error("structural error: {0}")]
    Structural(String),

    /// No feasible solution exists under the given constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
