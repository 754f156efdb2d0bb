use thiserror::Error;

/// Errors produced by the sketching library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An iterative kernel did not converge within its iteration cap.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// A caller broke an operation's contract (dimension mismatch, index out of range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A least-squares system whose coefficient matrix is numerically rank deficient.
    #[error("ill-posed system (numerical rank {rank} < {required}); achieved residual {residual:e}")]
    IllPosed {
        rank: usize,
        required: usize,
        residual: f64,
    },

    /// A privacy/accuracy parameter lies outside the domain of a threshold formula.
    #[error("parameter domain: {0}")]
    ParameterDomain(String),

    /// Composed δ reached 1.
    #[error("privacy budget exhausted: composed delta {0} >= 1")]
    BudgetExhausted(f64),

    /// Requested allocation exceeds the entry budget.
    #[error("capacity: {0}")]
    Capacity(String),

    /// Malformed sketch or matrix file.
    #[error("format: {0}")]
    Format(String),

    /// A row was streamed twice into a one-pass mechanism.
    #[error("one-pass violation: row {0} already ingested")]
    OnePassViolation(usize),

    /// Mechanism configuration is inconsistent.
    #[error("configuration: {0}")]
    Configuration(String),

    /// A lifted matrix does not clear its spectral guard.
    #[error("spectral guard failed: observed sigma_min {observed:e} < required {required:e}")]
    GuardFailed { required: f64, observed: f64 },

    /// Query ceiling reached.
    #[error("query ceiling of {0} reached")]
    QueryCeiling(usize),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
