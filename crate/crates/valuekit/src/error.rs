use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file; `location` pins the offending line (and cell
    /// where applicable).
    #[error("{path}:{location}: {message}")]
    Parse {
        path: String,
        location: String,
        message: String,
    },

    /// Two tables that must share a key set do not.
    #[error("key mismatch: {0}")]
    KeyMismatch(String),

    /// Shapes, arities, or key sequences disagree.
    #[error("misaligned inputs: {0}")]
    Misalignment(String),

    /// A caller-supplied parameter violates its contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: &str, location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            location: location.into(),
            message: message.into(),
        }
    }
}
