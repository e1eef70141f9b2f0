use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no path between {from:?} and {to:?}")]
    NoPath { from: (f64, f64), to: (f64, f64) },

    #[error("match result has no pairs")]
    NoMatches,

    #[error("every cluster is a singleton; no positive pair can be drawn")]
    NoPositivePairs,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("isomap needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("no training data: {0}")]
    NoData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("episode bin {0} could not be filled")]
    BinExhausted(String),

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("format error at frame {frame:?}: {message}")]
    Format { frame: Option<usize>, message: String },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(message: impl Into<String>) -> Self {
        Error::Format {
            frame: None,
            message: message.into(),
        }
    }

    pub(crate) fn format_at(frame: usize, message: impl Into<String>) -> Self {
        Error::Format {
            frame: Some(frame),
            message: message.into(),
        }
    }
}
