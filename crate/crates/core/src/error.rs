//! Error type shared by all modules.

use std::path::PathBuf;
use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

/// Failures surfaced by the reconstruction library.
///
/// Inputs that violate a documented contract are rejected with a dedicated
/// variant rather than silently coerced; callers can rely on the message
/// naming the offending file or parameter.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("decoding {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("encoding {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: expected single-channel grayscale, found {found}")]
    NotGrayscale { path: PathBuf, found: String },

    #[error("{path}: masks must be 8-bit single-channel, found {found}")]
    MaskNotEightBit { path: PathBuf, found: String },

    #[error("slice {index} is {found_h}x{found_w}, expected {want_h}x{want_w}")]
    DimensionMismatch {
        index: usize,
        found_h: usize,
        found_w: usize,
        want_h: usize,
        want_w: usize,
    },

    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("tile size {tile} exceeds slice extent {extent} along {axis}")]
    TileTooLarge {
        tile: usize,
        extent: usize,
        axis: &'static str,
    },

    #[error("slice index {index} outside stack of {len} slices")]
    SliceOutOfRange { index: usize, len: usize },

    #[error("stitch target pixel ({row}, {col}) covered by no tile")]
    UncoveredPixel { row: usize, col: usize },

    #[error("count error undefined: truth mask has no regions")]
    EmptyTruth,

    #[error("raster dimensions differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),

    #[error("phantom placement failed: {0}")]
    Placement(String),

    #[error("lofting needs at least 2 sections, got {got}")]
    TooFewSections { got: usize },
}
