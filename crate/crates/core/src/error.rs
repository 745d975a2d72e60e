use std::path::PathBuf;

use thiserror::Error;

/// Errors produced while building or applying the sparse representation.
#[derive(Debug, Error)]
pub enum Error {
    /// Target and source coincide; every kernel layer is singular at `r = 0`.
    #[error("coincident points: the kernel is singular at r = 0")]
    CoincidentPoints,

    #[error("missing normal: the {0} layer needs a unit normal on the {1} side")]
    MissingNormal(&'static str, &'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A structure that should have been produced upstream is missing.
    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("linear algebra: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// Wraps an error with the pipeline phase it came from.
    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    pub(crate) fn in_phase(self, phase: &'static str) -> Self {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
