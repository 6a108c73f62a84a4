//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or field shapes do not agree.
    #[error("{context}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A grid extent is not divisible by the requested window or factor.
    #[error("{what} = {value} is not divisible by {divisor}")]
    NotDivisible {
        what: &'static str,
        value: usize,
        divisor: usize,
    },

    /// Invalid parameter or configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A non-finite value was found where finite data is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// A grid position lies outside the tensor bounds.
    #[error("{context}: position {position:?} out of bounds {bounds:?}")]
    OutOfBounds {
        context: &'static str,
        position: Vec<i64>,
        bounds: Vec<usize>,
    },

    /// Flow fields that do not chain: source/target frame pair mismatch.
    #[error("flow pair mismatch: cannot chain {first:?} with {second:?}")]
    FlowPairMismatch {
        first: (usize, usize),
        second: (usize, usize),
    },

    /// A frame pair has no visible keypoints to synthesize flow from.
    #[error("no visible keypoints shared by frames {src} and {dst}")]
    NoVisibleKeypoints { src: usize, dst: usize },

    /// Provenance checksum did not match (wrong partition, wrong maps).
    #[error("{context}: checksum mismatch, expected {expected:#018x}, got {got:#018x}")]
    ChecksumMismatch {
        context: &'static str,
        expected: u64,
        got: u64,
    },

    /// Blocks handed to `merge` are out of order or do not belong to the partition.
    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),

    /// Operation requires double precision.
    #[error("{op} requires double precision (got single)")]
    PrecisionGuard { op: &'static str },

    /// Dense attention refused: too many tokens for the configured cap.
    #[error("token count {tokens} exceeds the dense-attention cap {cap}")]
    TokenCapExceeded { tokens: usize, cap: usize },

    /// Malformed binary or JSON payload.
    #[error("format error: {0}")]
    Format(String),

    /// File carries a version tag this build does not understand.
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    /// Training loss left the finite range.
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
