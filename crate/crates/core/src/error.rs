use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint corrupted: {0}")]
    Corrupt(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable short name used in the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::OutOfRange(_) => "out_of_range",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::DegenerateSignal(_) => "degenerate_signal",
            Error::Argument(_) => "argument",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::State(_) => "state",
            Error::Data(_) => "data",
            Error::Divergence { .. } => "divergence",
            Error::Format(_) => "format",
            Error::Corrupt(_) => "corrupt",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
