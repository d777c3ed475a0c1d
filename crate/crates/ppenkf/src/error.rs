use std::path::PathBuf;

use ppenkf_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, AppError>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Unknown key, type mismatch or invariant violation at a config path.
    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("{0}")]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        AppError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config { .. } | AppError::Validation(_) | AppError::Core(CoreError::Validation(_)) => 1,
            _ => 2,
        }
    }
}
