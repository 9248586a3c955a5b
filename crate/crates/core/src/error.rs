use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::{Cell, Dims};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("cell {cell} lies outside tensor dims {dims}")]
    OutOfBounds { cell: Cell, dims: Dims },

    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(Dims, Dims),

    #[error("cell {0} is not a non-zero of the tensor")]
    NotACell(Cell),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
