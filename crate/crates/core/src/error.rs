//! Error types shared by the core volumetric operations.

use thiserror::Error;

/// Errors raised by grid operations, phantom generation and `.svv` I/O.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Two grids that must share dimensions do not.
    #[error("dimension mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: [usize; 3],
        got: [usize; 3],
    },

    /// A precondition on argument values failed.
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input contains NaN or infinite values where finite values are required.
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    /// Reference volume has zero intensity range.
    #[error("degenerate intensity range: {0}")]
    DegenerateRange(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// File does not start with the expected magic bytes.
    #[error("bad magic bytes: expected \"SVV1\", got {got:?}")]
    BadMagic { got: [u8; 4] },

    /// File ended before the declared header or payload was complete.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// Declared dimensions do not match the payload length.
    #[error("payload size mismatch: header declares {expected} values, payload holds {got}")]
    PayloadSize { expected: usize, got: usize },

    /// Header JSON is malformed or has unsupported fields.
    #[error("bad header: {0}")]
    BadHeader(String),

    /// File holds a different kind of grid than requested.
    #[error("kind mismatch: expected {expected}, file holds {got}")]
    KindMismatch {
        expected: &'static str,
        got: String,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;
