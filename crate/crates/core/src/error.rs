use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid grid case:\n  - {}", .0.join("\n  - "))]
    InvalidCase(Vec<String>),

    #[error("invalid time series: {0}")]
    InvalidSeries(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("initial power flow did not converge (max mismatch {mismatch:.3e} p.u.)")]
    InitialDivergence { mismatch: f64 },

    #[error("episode window [{start}, {end}) exceeds series length {len}")]
    SeriesTooShort {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training halted: {0}")]
    Training(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
