//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph loading, linear algebra, training, and
/// evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix shapes; the message names both shapes.
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// An operation was handed an argument outside its domain.
    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// Dataset file failed to parse; carries file and line for diagnosis.
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// The graph violates a structural invariant.
    #[error("invalid graph: {0}")]
    Graph(String),

    /// Training diverged or was misconfigured.
    #[error("training failed: {0}")]
    Train(String),

    /// Checkpoint could not be read or does not match the dataset.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape {
            op,
            lhs: format!("{}x{}", lhs.0, lhs.1),
            rhs: format!("{}x{}", rhs.0, rhs.1),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
