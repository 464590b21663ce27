use thiserror::Error;

/// Errors raised by the kronsep library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The input is statistically or numerically degenerate (zero trace,
    /// vanishing normalizer, empty sample, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Power iteration did not reach the requested tolerance.
    #[error(
        "power iteration did not converge after {iterations} iterations \
         (residual {residual:.3e}, spectral gap estimate {gap:.3e})"
    )]
    Convergence {
        iterations: usize,
        residual: f64,
        gap: f64,
    },

    /// The synthetic model produced an unusable covariance.
    #[error("model error: {0}")]
    Model(String),

    /// A required configuration value is missing or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// Prefixes the message of a degenerate or domain error with context,
    /// leaving other variants untouched.
    pub fn context(self, what: &str) -> Self {
        match self {
            Error::Degenerate(m) => Error::Degenerate(format!("{what}: {m}")),
            Error::Domain(m) => Error::Domain(format!("{what}: {m}")),
            other => other,
        }
    }
}
