use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Input stack or archive is malformed.
    #[error("malformed input: {0}")]
    Format(String),

    /// The memory budget cannot hold the minimal working set.
    #[error("planning failed: {0}")]
    Plan(String),

    /// Partial results do not tile the retained wave-vector set.
    #[error("merge failed: {0}")]
    Merge(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
