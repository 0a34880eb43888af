use thiserror::Error;

use crate::solvers::SolveTrace;

pub type Result<T> = std::result::Result<T, CtmError>;

#[derive(Debug, Error)]
pub enum CtmError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("integration failed at t={time}: {reason}")]
    Integration {
        time: f64,
        reason: String,
        trace: Box<SolveTrace>,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CtmError {
    pub fn domain(msg: impl Into<String>) -> Self {
        CtmError::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CtmError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CtmError::Numeric(msg.into())
    }
}
