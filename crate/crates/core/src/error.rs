//! Crate-wide error type.

use thiserror::Error;

/// All errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Batch-norm train mode needs at least two elements per channel.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// An unpooling index points outside the target tensor.
    #[error("corrupted pooling index: {0}")]
    CorruptedIndex(String),

    #[error("backward called on an empty tape")]
    EmptyTape,

    /// NaN or divergence detected during execution.
    #[error("numerical failure in {layer}: {detail}")]
    Numerical { layer: String, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

/// Checkpoint file problems, each distinct so callers can react precisely.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file")]
    Truncated,
    #[error("config hash mismatch: file {found:#018x}, expected {expected:#018x}")]
    ConfigHashMismatch { found: u64, expected: u64 },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
}

/// Coarse category used by the CLI to pick its exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Caller misuse: bad arguments, invalid configuration.
    Usage,
    /// Problems with input data or on-disk artifacts.
    Data,
    /// NaN, divergence, or other numerical breakdown.
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidParameter(_) => ErrorCategory::Usage,
            Error::Numerical { .. } => ErrorCategory::Numerical,
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
