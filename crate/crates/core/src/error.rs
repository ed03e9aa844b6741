use thiserror::Error;

/// Errors produced by the P-gradient library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("P(a) is not strictly positive and finite on [m, M]: P({at}) = {value}")]
    NonPositivePolynomial { at: f64, value: f64 },

    #[error("gradient is zero; the iterate is already the minimizer")]
    ZeroGradient,

    #[error("degenerate measure (zero variance); the orbit has converged in finitely many steps")]
    DegenerateMeasure,

    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize },

    #[error("ill-conditioned estimate: {0}")]
    IllConditioned(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
