//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::grid::Dims;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small: {found}, need at least {min_side}x{min_side}")]
    GridTooSmall { found: Dims, min_side: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: Dims, found: Dims },

    #[error("vector length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("need at least {needed} anchor pixels, found {found}")]
    InsufficientAnchors { needed: usize, found: usize },

    #[error("degenerate prior: all anchor-pixel prior values are equal")]
    DegeneratePrior,

    #[error("point lies on or outside the Poincare ball boundary")]
    OutsideBall,

    #[error("instance too large for the dense oracle: {pixels} pixels, limit {limit}")]
    SizeExceeded { pixels: usize, limit: usize },

    #[error("expected 16-bit samples, found {found}")]
    WrongBitDepth { found: String },

    #[error("expected single-channel grayscale, found {found}")]
    WrongChannelCount { found: String },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("raster payload contains non-finite values")]
    NonFinitePayload,

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("sample count {count} exceeds pixel count {pixels}")]
    CountExceedsPixels { count: usize, pixels: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input file: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("png decode error: {0}")]
    PngDecode(String),

    #[error("png encode error: {0}")]
    PngEncode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
