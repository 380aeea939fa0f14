//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or image dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value left the mathematical domain of an operation (log of a
    /// nonpositive number, probability outside (0,1), ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller violated a precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// A binary file failed validation. `offset` is the byte position of the
    /// first offending datum.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// A text configuration or observation file failed validation.
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    /// Training produced a non-finite objective.
    #[error("training diverged at iteration {iter}: {msg}")]
    Diverged { iter: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
