use std::path::PathBuf;

use voxseg_core::CoreError;

/// Error type for everything above the core algorithms. Each variant maps
/// to a process exit code: 2 config, 3 I/O, 4 contract violation.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Contract(#[from] CoreError),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Io { .. } => 3,
            PipelineError::Format { .. } => 3,
            PipelineError::Contract(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
