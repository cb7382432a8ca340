use std::path::PathBuf;

use ginger_core::GingerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("failed to parse config {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("numerical abort in run {run}: {reason}")]
    NumericalAbort { run: String, reason: String },

    #[error("{failed} of {total} verification checks failed")]
    VerificationFailed { failed: usize, total: usize },

    #[error(transparent)]
    Core(#[from] GingerError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit status: 1 usage/config, 2 verification, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::VerificationFailed { .. } => 2,
            HarnessError::NumericalAbort { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
