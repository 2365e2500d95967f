use thiserror::Error;

/// Failure taxonomy for the whole crate. Every variant names the operation
/// that failed so batch logs stay attributable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {source}")]
    Io {
        op: &'static str,
        #[source]
        source: std::io::Error,
    },
    /// Bad arguments, malformed files, violated preconditions.
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    /// Numerical breakdown: factorization failed at maximum jitter,
    /// eigensolver did not converge, and the like.
    #[error("{op}: {msg}")]
    Numerical { op: &'static str, msg: String },
}

impl Error {
    pub fn io(op: &'static str, source: std::io::Error) -> Self {
        Error::Io { op, source }
    }

    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }

    pub fn numerical(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Numerical {
            op,
            msg: msg.into(),
        }
    }

    /// Process exit code used by the batch front end: 2 for usage and input
    /// problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Invalid { .. } => 2,
            Error::Numerical { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
