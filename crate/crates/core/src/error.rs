use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A ranking metric was requested on data without any positive label.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    /// A denominator that must be strictly positive was not.
    #[error("division domain error: {0}")]
    DivisionDomain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An internal invariant failed at runtime.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Every run of an experiment failed.
    #[error("run failed: {0}")]
    RunFailed(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input rather than a failed computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Usage(_) | Error::Parse { .. } | Error::Precondition(_)
        )
    }
}
