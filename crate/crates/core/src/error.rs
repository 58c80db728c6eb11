use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible layer shapes: {0}")]
    IncompatibleShapes(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite value in {0}")]
    NonFiniteActivation(&'static str),
    #[error("trace was recorded against different weights or mask")]
    StaleTrace,
    #[error("mask does not match network: {0}")]
    MaskMismatch(String),
    #[error("mask segment {0} has no retained filter")]
    EmptyLayer(usize),
    #[error("segment length {got} does not match layer with {expected} filters")]
    SegmentLengthMismatch { expected: usize, got: usize },
    #[error("individual at pool index {0} has not been evaluated")]
    UnevaluatedIndividual(usize),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bad IDX magic {found:#010x} (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("truncated file {0}")]
    TruncatedFile(PathBuf),
    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
