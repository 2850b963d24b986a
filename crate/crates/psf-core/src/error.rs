//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("solver failure at step {step}: {message}")]
    Solver { step: usize, message: String },

    #[error("tube propagation failed at step {step}: {message}")]
    Propagation { step: usize, message: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("unsafe construction: {0}")]
    UnsafeConstruction(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
