use std::path::PathBuf;

use emtrace_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Data(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for usage and configuration problems, 3 for bad data.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                CoreError::InvalidProgram(_)
                | CoreError::InvalidParameter(_)
                | CoreError::InsufficientBaseline { .. }
                | CoreError::InvalidK { .. }
                | CoreError::InvalidInput(_)
                | CoreError::Index { .. } => 2,
                CoreError::Format(_)
                | CoreError::Io { .. }
                | CoreError::ZeroSignal
                | CoreError::Numerical(_)
                | CoreError::Dimension { .. }
                | CoreError::ContaminatedBaseline(_)
                | CoreError::Evaluation(_)
                | CoreError::Data(_) => 3,
            },
        }
    }
}
