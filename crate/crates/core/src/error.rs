//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Malformed text input (grid files, drill-hole CSVs), reported with the offending line.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Inconsistent tensor / grid / window shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Dimension mismatch at a layer boundary inside a network stack.
    #[error("layer {layer}: {msg}")]
    Layer { layer: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Operation attempted in a state that does not support it (e.g. simulating
    /// with an untrained model, variograms over a grid with unknown nodes).
    #[error("{0}")]
    State(String),

    /// A checkpoint file that cannot be read back.
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
