use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PpfError>;

#[derive(Debug, Error)]
pub enum PpfError {
    /// Malformed or inconsistent input file content.
    #[error("{path}:{line}: {msg}")]
    Ingest { path: PathBuf, line: u64, msg: String },

    #[error("invalid channel label {label:?}: {msg} (offending token {token:?})")]
    Channel {
        label: String,
        token: String,
        msg: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PpfError {
    pub(crate) fn ingest(path: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        PpfError::Ingest {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PpfError::Config(_) => 2,
            PpfError::Numerical(_) => 4,
            _ => 3,
        }
    }
}
