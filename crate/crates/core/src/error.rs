use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration. The CLI maps this to exit code 2.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty day: day {0} has no records")]
    EmptyDay(usize),

    #[error("missing day: day {0} is not available")]
    MissingDay(usize),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{what} id {id} out of range (table size {size})")]
    OutOfRange { what: &'static str, id: usize, size: usize },

    #[error("non-finite loss {loss} (batch size {batch}, max |param| {max_abs_param})")]
    NonFiniteLoss { loss: f64, batch: usize, max_abs_param: f64 },

    #[error("singular system: determinant {0:e}")]
    SingularSystem(f64),

    #[error("degenerate conditional: {0}")]
    DegenerateConditional(String),

    #[error("parse error in {path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }

    /// True for errors that stem from a bad configuration rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::TomlDe(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
