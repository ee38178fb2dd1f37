use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("alignment undefined: {0}")]
    UndefinedAlignment(String),

    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("degenerate truth: {0}")]
    DegenerateTruth(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("model format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("parse error in {path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
