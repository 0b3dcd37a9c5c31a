use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("factorization failed: {0}")]
    FactorizationFailure(String),

    #[error("GMRES did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("energy fraction undefined: total snapshot energy is zero")]
    UndefinedEnergy,

    #[error("reduced step matrix is singular: {0}")]
    DegenerateBasis(String),

    #[error("reduced operators are stale (operators version {operators}, trajectory version {trajectory})")]
    StaleOperators { operators: u64, trajectory: u64 },

    #[error("relative normalization J_rom + eta is zero")]
    DegenerateNormalization,

    #[error("estimate is zero while the true error is {true_error:e}")]
    InfiniteEffectivity { true_error: f64 },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
