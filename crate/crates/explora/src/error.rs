//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

/// Errors surfaced by the library and the CLI.
///
/// Variants map onto process exit codes: `Usage` → 1, `Io`/`Data`/`Validation`
/// → 2, `Backend` → 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Data {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Validation(String),

    #[error("backend {backend} failed for prompt {prompt_hash}: {msg}")]
    Backend {
        backend: String,
        prompt_hash: String,
        msg: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code for this error (0 is success, never returned here).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Io { .. } | Error::Data { .. } | Error::Validation(_) => 2,
            Error::Backend { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
