use thiserror::Error;

/// Errors raised by the inversion library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("ensemble needs at least two particles, got {0}")]
    DegenerateEnsemble(usize),

    #[error("posterior precision is numerically singular (condition number {0:e})")]
    SingularPrecision(f64),

    #[error("innovation covariance is numerically singular")]
    SingularInnovation,

    #[error("ensemble spread is rank deficient (rank {rank}, need at least {required})")]
    RankDeficient { rank: usize, required: usize },

    #[error("gamma must be positive, got {0}")]
    InvalidGamma(f64),

    #[error("pCN step size must lie in (0, 1), got {0}")]
    InvalidStep(f64),

    #[error("requested rank {requested} exceeds the numerical rank {available} of the prior covariance")]
    RankExceeded { requested: usize, available: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("linear solver failed: {0}")]
    SolverFailure(String),

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("artifacts disagree on the problem: {0}")]
    MismatchedProblem(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
