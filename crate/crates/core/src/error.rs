use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("batch norm evaluated in eval mode before running statistics exist")]
    MissingRunningStats,

    #[error("backward pass requested without a forward cache ({0})")]
    MissingCache(&'static str),

    #[error("event {index} at ({x}, {y}) lies outside the {width}x{height} sensor")]
    EventOutOfBounds { index: usize, x: u16, y: u16, width: u16, height: u16 },

    #[error("events are not sorted by timestamp: event {index} has t={t} after t={prev}")]
    UnsortedEvents { index: usize, prev: u64, t: u64 },

    #[error("malformed {what} at byte offset {offset}: {detail}")]
    Malformed { what: &'static str, offset: u64, detail: String },

    #[error("truncated {what}: expected more data at byte offset {offset}")]
    Truncated { what: &'static str, offset: u64 },

    #[error("label count {labels} does not match frame count {frames}")]
    LabelCountMismatch { labels: usize, frames: usize },

    #[error("weight file version {found} is not supported (expected {expected})")]
    Version { found: String, expected: String },

    #[error("weight tensor `{name}` does not match the model: {detail}")]
    WeightMismatch { name: String, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by invalid input data rather than numerics or usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EventOutOfBounds { .. }
                | Error::UnsortedEvents { .. }
                | Error::Malformed { .. }
                | Error::Truncated { .. }
                | Error::LabelCountMismatch { .. }
                | Error::Version { .. }
                | Error::WeightMismatch { .. }
                | Error::Csv { .. }
                | Error::Empty(_)
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Numerical(_))
    }
}
