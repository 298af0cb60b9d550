use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. `exit_code` fixes the process-level contract:
/// 2 = config error, 3 = missing/unusable prerequisite, 4 = numerical failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite: {}", .0.display())]
    MissingPrereq(PathBuf),

    #[error("{}:{line}: malformed line: {msg}", path.display())]
    DataFormat {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown token {token:?} (line {line})")]
    UnknownToken { token: String, line: usize },

    #[error("empty dataset: {}", .0.display())]
    EmptyDataset(PathBuf),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NonFinite(String),

    #[error("enumeration too large: {count} sequences exceeds limit {limit}; use MonteCarlo")]
    EnumerationTooLarge { count: u128, limit: u64 },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI. 0 is success and never produced here.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::EnumerationTooLarge { .. } => 2,
            Error::MissingPrereq(_)
            | Error::DataFormat { .. }
            | Error::UnknownToken { .. }
            | Error::EmptyDataset(_)
            | Error::Io { .. }
            | Error::Json { .. } => 3,
            Error::NonFinite(_) => 4,
        }
    }
}
