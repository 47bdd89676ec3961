use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Not enough data to fit a distribution; carries a remedy hint.
    #[error("no qualifying data: {0}")]
    NoQualifyingData(String),

    #[error("island {island}: no fragment length in the distribution fits transcript {transcript} (length {length} bp)")]
    Truncation {
        island: String,
        transcript: String,
        length: i64,
    },

    #[error("no admissible start position: phi({bound}) = 0 for transcript length {length}, fragment length {fragment}")]
    DegenerateStart {
        bound: f64,
        length: i64,
        fragment: i64,
    },

    #[error("malformed exon path at position {pos}: {msg}")]
    PathSyntax { pos: usize, msg: String },

    #[error("{0}")]
    Inference(String),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent user input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::InvalidInput(_) | Error::PathSyntax { .. } | Error::Io { .. }
        )
    }
}
