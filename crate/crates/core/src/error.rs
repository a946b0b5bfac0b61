use std::path::PathBuf;

use tanger_autograd::AutogradError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TangerError {
    #[error(transparent)]
    Autograd(#[from] AutogradError),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {detail}")]
    Load {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl TangerError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Validation(_) | Self::Config(_) | Self::Vocabulary(_) | Self::Load { .. }
        ) || matches!(
            self,
            Self::Autograd(AutogradError::Validation { .. } | AutogradError::Shape { .. })
        )
    }
}

pub type Result<T, E = TangerError> = std::result::Result<T, E>;
