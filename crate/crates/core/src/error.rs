use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad magic bytes, unknown version or otherwise unparseable container.
    #[error("format error: {0}")]
    Format(String),

    /// Header and payload disagree (truncation, trailing bytes).
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// Payload decoded but violates a value invariant (NaN, Inf, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Argument outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
