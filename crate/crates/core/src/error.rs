use thiserror::Error;

/// Errors raised while building kernels or running transport solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),

    #[error("cosine cost is undefined for the zero vector (row {0})")]
    ZeroVector(usize),

    #[error("landmark kernel matrix could not be factorized even with jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("{variant} kernel produced a non-positive matrix-vector entry at index {index} ({value:e})")]
    NonPositiveKernel {
        variant: &'static str,
        index: usize,
        value: f64,
    },

    #[error("numerical instability in {variant} Sinkhorn: {detail}")]
    Stabilization {
        variant: &'static str,
        detail: String,
    },

    #[error("plan has zero variance; Pearson correlation is undefined")]
    ZeroVariance,

    #[error("infeasible scenario: {0}")]
    Infeasible(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
