//! Error types for network construction, training and checkpointing.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Core(#[from] svin_core::CoreError),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss is not finite ({detail})")]
    Divergence { step: u64, detail: String },

    /// A loss part fed to the weighted total is not finite.
    #[error("non-finite loss term: {0}")]
    NonFiniteTerm(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;
