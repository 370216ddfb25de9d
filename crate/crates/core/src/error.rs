use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid program: {0}")]
    InvalidProgram(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range 0..={len}")]
    Index { index: usize, len: usize },

    #[error("baseline needs at least {required} observations, got {got}")]
    InsufficientBaseline { required: usize, got: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("signal has zero power; SNR is undefined")]
    ZeroSignal,

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("neighbor count k = {k} requires more than {k} points, got {points}")]
    InvalidK { k: usize, points: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("baseline contains {0} anomalous observation(s)")]
    ContaminatedBaseline(usize),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
