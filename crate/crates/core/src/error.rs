use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // tensors and blocks
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("spatial dimension {0} is odd")]
    OddSpatialDim(usize),
    #[error("input contains NaN or infinite values")]
    NonFiniteInput,
    #[error("{channels} channels cannot be split into {heads} heads")]
    HeadMismatch { channels: usize, heads: usize },
    #[error("skip connection shape {skip:?} does not match upsampled shape {expected:?}")]
    SkipShapeMismatch { skip: Vec<usize>, expected: Vec<usize> },
    #[error("input {height}x{width} is not divisible by {divisor}")]
    BadSpatialDivisibility { height: usize, width: usize, divisor: usize },
    #[error("adjacency has a negative entry {0}")]
    NegativeAdjacency(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // pipeline
    #[error("every pixel is below the margin threshold")]
    AllBlackImage,
    #[error("target size must be positive")]
    ZeroTargetSize,
    #[error("mask has no foreground pixel")]
    EmptyMask,
    #[error("roi {0} lies outside the image")]
    RoiOutOfBounds(String),
    #[error("patch shape {patch:?} does not match roi size {roi:?}")]
    PatchRoiMismatch { patch: Vec<usize>, roi: (usize, usize) },

    // training
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),

    // data
    #[error("phantom spec out of bounds: {0}")]
    SpecOutOfBounds(String),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("bad split: {0}")]
    BadSplit(String),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
