//! Reconstruction of individual corallites from micro-CT slice stacks.
//!
//! The crate covers the full path from raw slice images to per-corallite
//! geometry:
//!
//! - [`volume`]: slice-stack and annotation-mask I/O plus the dataset manifest
//! - [`tiler`]: sliding-window tile grids, depth snippets and mask stitching
//! - [`regions`]: connected-component labeling and per-region ellipse moments
//! - [`eval`]: component-aware error maps, topological loss and mask metrics
//! - [`baseline`]: classical threshold-based segmentation stand-in
//! - [`phantom`]: synthetic tube volumes with exact ground truth
//! - [`tracer`]: cross-slice region matching into per-corallite tracks
//! - [`mesher`]: ellipse-stack lofting and Wavefront OBJ export
//!
//! Numeric kernels are generic over the scalar type through [`Scalar`];
//! the type aliases at the crate root fix the `f64` variants the pipeline
//! uses by default.

pub mod baseline;
pub mod error;
pub mod eval;
pub mod grid;
pub mod mesher;
pub mod phantom;
pub mod regions;
pub mod tiler;
pub mod tracer;
pub mod volume;

pub use error::{CoreError, Result};
pub use grid::Grid;

use std::fmt;

/// Floating-point scalar the numeric kernels are generic over.
///
/// Implemented for `f32` and `f64`. Conversions from pixel counts and
/// image coordinates go through `from_usize`/`from_f64`, which cannot
/// fail for the magnitudes a slice raster can hold.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from a pixel count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("pixel count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Default scalar for the shipped pipeline: metric tolerances are stated
/// at 1e-9, which needs double precision.
pub type Real = f64;

/// Region properties at pipeline precision.
pub type RegionPropsF = regions::RegionProps<Real>;
/// Error map at pipeline precision.
pub type ErrorMapF = eval::ErrorMap<Real>;
/// Evaluation report at pipeline precision.
pub type EvalReportF = eval::EvalReport<Real>;
/// Tracing parameters at pipeline precision.
pub type TraceParamsF = tracer::TraceParams<Real>;
/// A traced corallite at pipeline precision.
pub type TrackF = tracer::Track<Real>;
/// A lofted mesh at pipeline precision.
pub type MeshF = mesher::Mesh<Real>;
