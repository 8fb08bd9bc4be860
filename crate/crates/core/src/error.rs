use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A model invariant was violated; `arm` is the id of the offending arm.
    #[error("arm {arm}: {msg}")]
    Invariant { arm: usize, msg: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },

    /// A check run by the library did not pass.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn invariant(arm: usize, msg: impl Into<String>) -> Self {
        Error::Invariant {
            arm,
            msg: msg.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        }
    }
}
