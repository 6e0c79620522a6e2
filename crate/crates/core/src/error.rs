use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Each variant maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: expected length {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    /// Out-of-order protocol calls, unknown peers, missing seeds.
    #[error("protocol state error: {0}")]
    ProtocolState(String),

    /// A cryptographic check failed while aggregating; the round is void.
    #[error("protocol abort: {0}")]
    Abort(String),

    #[error("malformed encoding: {0}")]
    Decode(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 protocol abort, 4 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Abort(_) => 3,
            Error::Io { .. } | Error::Decode(_) => 4,
            _ => 1,
        }
    }
}
