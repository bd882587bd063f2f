//! Application errors and their process exit codes.

use std::path::{Path, PathBuf};

use tripartite_core::training::TrainError;
use tripartite_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl AppError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        AppError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn data(reason: impl Into<String>) -> Self {
        AppError::Data(reason.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for config problems, 3 for data and file problems, 4 for
    /// non-finite values.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config { .. } => 2,
            AppError::Data(_) | AppError::Io { .. } => 3,
            AppError::Numerical(_) => 4,
        }
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config { key, reason } => AppError::config(key, reason),
            CoreError::NonFinite { .. } | CoreError::Numerics(_) => AppError::Numerical(e.to_string()),
            other => AppError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for AppError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Invalid(e) => e.into(),
            TrainError::Diverged(_) => AppError::Numerical(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::Data(e.to_string())
    }
}
