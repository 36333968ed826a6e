use thiserror::Error;

/// Errors raised by the library. The CLI maps configuration-type errors to
/// exit code 1 and numerical ones to exit code 2.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("correlation matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("{op} is not supported for {family} in dimension {dim}")]
    Unsupported {
        op: &'static str,
        family: &'static str,
        dim: usize,
    },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("conditioning on an event of probability zero (n = {n})")]
    ZeroProbability { n: u64 },

    #[error("density is not positive at sampled point {point:?}")]
    NonPositiveDensity { point: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Io(_)
                | Error::InvalidParameter(_)
                | Error::Domain(_)
                | Error::DimensionMismatch { .. }
                | Error::Unsupported { .. }
                | Error::NotPositiveDefinite
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
