use std::path::PathBuf;
use thiserror::Error;

use celab_core::error::CoreError;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Config file problems carry the exact line so users can fix them.
    #[error("{path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },
    #[error("invalid {field}: {message}")]
    BadSpec { field: &'static str, message: String },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Usage errors (bad config, bad spec) exit 2; everything else exits 1.
    pub fn is_usage(&self) -> bool {
        matches!(self, Self::Config { .. } | Self::BadSpec { .. })
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
