use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// rho = 1 leaves no idiosyncratic noise; the inner densities collapse.
    #[error("degenerate model: rho = {rho} leaves zero conditional variance")]
    DegenerateModel { rho: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("insufficient acceptance: {accepted} of {target} accepted after {proposed} proposals (rate {rate:.3e})")]
    InsufficientAcceptance {
        accepted: usize,
        target: usize,
        proposed: usize,
        rate: f64,
    },

    #[error("covariance matrix is not positive definite")]
    SingularCovariance,

    #[error("invalid quadrature: {0}")]
    InvalidQuadrature(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    /// An error raised while processing one point of a sweep.
    #[error("{context}: {source}")]
    Tagged {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn tagged(self, context: impl Into<String>) -> Self {
        Error::Tagged {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
