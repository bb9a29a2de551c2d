use std::path::PathBuf;

use psr_core::PsrError;
use thiserror::Error;

pub type Result<T, E = ToolError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] PsrError),
}

impl ToolError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ToolError::Io { path: path.into(), err: source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        ToolError::Parse { path: path.into(), line, message: message.into() }
    }

    pub fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        ToolError::Schema { path: path.into(), message: message.into() }
    }

    /// Process exit code: 2 usage, 3 parse or IO failure, 4 undefined metric.
    pub fn exit_code(&self) -> u8 {
        match self {
            ToolError::Usage(_) | ToolError::Core(PsrError::InvalidArgument { .. }) => 2,
            ToolError::Core(PsrError::UndefinedMetric(_) | PsrError::UndefinedLoss(_)) => 4,
            _ => 3,
        }
    }
}
