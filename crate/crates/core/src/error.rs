use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ring size {0} must be even and at least 4")]
    InvalidRingSize(usize),

    #[error("site {site} lies outside the window of a ring with {m} sites")]
    SiteOutOfWindow { site: i64, m: usize },

    #[error("walsh index must be strictly increasing: {0:?}")]
    NonCanonicalIndex(Vec<i64>),

    #[error("observable carries a term of degree {0}; only degrees 0 and 2 are supported here")]
    UnsupportedDegree(usize),

    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("{what} = {value} exceeds the limit {limit}")]
    TooLarge {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("conjugate gradient stopped after {iterations} iterations at relative residual {residual:e}")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("adaptive quadrature did not reach tolerance {tol:e} (estimated error {estimate:e})")]
    QuadratureNotConverged { tol: f64, estimate: f64 },

    #[error("field support [{lo}, {hi}] leaves the safe window (-{half}, {half}) of the ring")]
    SafeWindow { lo: f64, hi: f64, half: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::CgNotConverged { .. } | Error::QuadratureNotConverged { .. } => 3,
            Error::Io(_) => 3,
            _ => 2,
        }
    }
}
