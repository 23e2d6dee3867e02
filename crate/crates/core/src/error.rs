use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every constraint violation found, not just the first one.
    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A non-finite value appeared while executing step `step`. The optimizer
    /// state is left at the last finite iterate.
    #[error("diverged at step {step}: non-finite {what}")]
    Diverged { step: u64, what: &'static str },

    #[error("verification failed: {}", .0.join("; "))]
    Verification(Vec<String>),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code for the CLI: 1 config, 2 verification, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Verification(_) | Error::Diverged { .. } => 2,
            Error::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
