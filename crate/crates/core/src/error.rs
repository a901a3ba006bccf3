use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PcError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} requires a mini-batch of size one, got {got}")]
    BatchSizeOne { what: &'static str, got: usize },

    #[error("implicit SGD oracle did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("linear system (I + beta H) is singular")]
    Singular,

    #[error("empty update log")]
    EmptyLog,
}

pub type Result<T> = std::result::Result<T, PcError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(PcError::Shape {
        op,
        detail: detail.into(),
    })
}
