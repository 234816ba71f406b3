use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric: max asymmetry {max_asymmetry:.3e} exceeds {tolerance:.3e}")]
    NotSymmetric {
        max_asymmetry: f64,
        tolerance: f64,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("IDX format error at byte {offset}: {reason}")]
    IdxFormat { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
