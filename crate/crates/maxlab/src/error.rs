use thiserror::Error;

/// Crate-wide error type. Variants are coarse on purpose: the CLI maps each
/// to a distinct process exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// A documented guard tripped (enumeration too large, bad parameter).
    #[error("guard violation: {0}")]
    Guard(String),

    /// A requested operation cannot be represented at the given resolution.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Two lattice objects were combined but live on different lattices.
    #[error("lattice mismatch: {0}")]
    SpecMismatch(String),

    /// Text input (measure file, config) failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn guard(msg: impl Into<String>) -> Self {
        Error::Guard(msg.into())
    }
    pub fn resolution(msg: impl Into<String>) -> Self {
        Error::Resolution(msg.into())
    }
    pub fn mismatch(msg: impl Into<String>) -> Self {
        Error::SpecMismatch(msg.into())
    }
}
