//! Error type shared across the pipeline.
//!
//! Batch processing needs to report which stage of which scan failed, so
//! errors raised inside [`crate::faz::measure`] are wrapped in a
//! [`Error::Stage`] that carries the stage name.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Scan container is missing files or has a garbled header.
    #[error("container: {0}")]
    Container(String),

    /// Grid shapes that were required to agree do not.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// Data violates a documented invariant (non-finite intensity,
    /// surface out of range, ordering violation, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("config: {0}")]
    Config(String),

    /// Input is degenerate for the requested operation (constant image
    /// for histogram thresholding, all surface points flagged, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A pipeline stage failed; `stage` identifies it for diagnostics.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps the error with the pipeline stage it occurred in.
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Stage name if this error was raised inside a tagged pipeline stage.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
