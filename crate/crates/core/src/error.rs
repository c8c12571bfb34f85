use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library and the benchmark harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("observation function has no gradient; the G1 formula needs one, use G2 instead")]
    MissingGradient,

    #[error("quadrature did not converge (achieved relative tolerance {achieved:e})")]
    Quadrature { achieved: f64 },

    #[error("no exact solution available: {0}")]
    NoOracle(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("filter step {step}: {source}")]
    Step { step: usize, source: Box<Error> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// `true` for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite(_) | Error::Quadrature { .. } | Error::Numerical(_) => true,
            Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
