use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid attention config: {0}")]
    InvalidConfig(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),

    #[error("tile {0} is outside the grid")]
    TileOutOfRange(String),

    #[error("tile rectangle exceeds the bounds of tensor {tensor}: {detail}")]
    TileOutOfBounds {
        tensor: &'static str,
        detail: String,
    },

    #[error("no {0} entry to normalize against")]
    MissingBaseline(&'static str),

    #[error(
        "unknown preset `{0}` (expected one of llama3-8b, llama3-70b, llama3-405b, deepseek-v3)"
    )]
    UnknownPreset(String),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("run refused: {0}")]
    Refused(String),

    #[error("cannot read config {path}: {source}")]
    ReadConfig {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from user-provided configuration rather than
    /// a failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::InvalidTopology(_)
                | Error::InvalidParams(_)
                | Error::UnknownPreset(_)
                | Error::UnknownStrategy(_)
                | Error::Parse { .. }
                | Error::Refused(_)
                | Error::ReadConfig { .. }
        )
    }
}
