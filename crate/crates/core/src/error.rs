use thiserror::Error;

/// Errors raised by the numerical kernels and the experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("frame is rank deficient at column {column} (M-norm {norm:e} after projection)")]
    RankDeficient { column: usize, norm: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("operator is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("factorization broke down at pivot {pivot} (value {value:e})")]
    Breakdown { pivot: usize, value: f64 },

    #[error("metric fails its round-trip check: relative residual {residual:e}")]
    RoundTrip { residual: f64 },

    #[error("dense path limited to n <= {limit}, got n = {n}")]
    TooLarge { n: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed trace: {0}")]
    Trace(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
