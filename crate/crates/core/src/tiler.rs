//! Sliding-window tile grids, depth snippets and tile-mask stitching.
//!
//! Slices are cut into square `tile_size` windows on a step-`k` lattice.
//! The last window along each axis is clamped to the slice border so the
//! union of windows always covers every pixel. A snippet stacks the same
//! window across `depth` consecutive slices (odd depth, centre slice in
//! the middle) with edge replication at the top and bottom of the stack.
//! Stitching reverses tiling: per-tile masks or probability planes are
//! averaged per pixel and binarised at 0.5.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::volume::{GraySlice, MaskSlice, SliceStack};
use crate::Scalar;

/// Sliding-window plan for one slice shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub tile_size: usize,
    pub step_k: usize,
    pub height: usize,
    pub width: usize,
    /// Ascending row origins; the last one is `height - tile_size`.
    pub row_origins: Vec<usize>,
    /// Ascending column origins; the last one is `width - tile_size`.
    pub col_origins: Vec<usize>,
}

impl TileGrid {
    /// All window origins in row-major order.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.row_origins.len() * self.col_origins.len());
        for &r in &self.row_origins {
            for &c in &self.col_origins {
                out.push((r, c));
            }
        }
        out
    }

    pub fn num_tiles(&self) -> usize {
        self.row_origins.len() * self.col_origins.len()
    }
}

/// One window stacked across `tiles.len()` consecutive slices.
#[derive(Debug, Clone)]
pub struct Snippet {
    /// Per-slice crops, ordered by slice; the centre sits at `tiles.len() / 2`.
    pub tiles: Vec<GraySlice>,
    pub center_slice: usize,
    /// `(row, col)` of the window's top-left corner.
    pub origin: (usize, usize),
    pub tile_size: usize,
    /// Crop of the centre slice's annotation, when one exists.
    pub center_annotation: Option<Grid<bool>>,
}

fn axis_origins(extent: usize, tile: usize, step: usize) -> Vec<usize> {
    let mut origins = Vec::new();
    let mut origin = 0usize;
    loop {
        if origin + tile >= extent {
            // Regular lattice would overrun; clamp the final window flush
            // with the border. When origin + tile == extent the window fits
            // exactly and the clamp is a no-op.
            origins.push(extent - tile);
            break;
        }
        origins.push(origin);
        origin += step;
    }
    origins
}

/// Plans the window lattice for a `height x width` slice.
///
/// Fails when the tile does not fit the slice or when the step is zero or
/// larger than the tile (which would leave gaps between windows).
pub fn plan_grid(height: usize, width: usize, tile_size: usize, step_k: usize) -> Result<TileGrid> {
    if tile_size == 0 {
        return Err(CoreError::InvalidParam("tile_size must be positive".into()));
    }
    if step_k == 0 || step_k > tile_size {
        return Err(CoreError::InvalidParam(format!(
            "step_k must satisfy 1 <= step_k <= tile_size, got step_k={step_k} tile_size={tile_size}"
        )));
    }
    if tile_size > height {
        return Err(CoreError::TileTooLarge {
            tile: tile_size,
            extent: height,
            axis: "rows",
        });
    }
    if tile_size > width {
        return Err(CoreError::TileTooLarge {
            tile: tile_size,
            extent: width,
            axis: "cols",
        });
    }
    Ok(TileGrid {
        tile_size,
        step_k,
        height,
        width,
        row_origins: axis_origins(height, tile_size, step_k),
        col_origins: axis_origins(width, tile_size, step_k),
    })
}

/// Cuts one depth snippet out of a stack.
///
/// `depth` must be odd so the annotated slice sits exactly in the middle.
/// Slices past either end of the stack are replaced by the nearest
/// existing slice (edge replication).
pub fn extract_snippet(
    stack: &SliceStack,
    center_slice: usize,
    origin: (usize, usize),
    tile_size: usize,
    depth: usize,
    center_annotation: Option<&MaskSlice>,
) -> Result<Snippet> {
    if depth.is_multiple_of(2) || depth == 0 {
        return Err(CoreError::InvalidParam(format!(
            "snippet depth must be odd and positive, got {depth}"
        )));
    }
    if center_slice >= stack.depth() {
        return Err(CoreError::SliceOutOfRange {
            index: center_slice,
            len: stack.depth(),
        });
    }
    let (h, w) = (stack.height(), stack.width());
    let (r0, c0) = origin;
    if r0 + tile_size > h || c0 + tile_size > w {
        return Err(CoreError::InvalidParam(format!(
            "window origin ({r0}, {c0}) with tile {tile_size} leaves the {h}x{w} slice"
        )));
    }

    let half = (depth - 1) / 2;
    let last = stack.depth() - 1;
    let tiles = (0..depth)
        .map(|d| {
            let wanted = center_slice as i64 + d as i64 - half as i64;
            let clamped = wanted.clamp(0, last as i64) as usize;
            match &stack.slices[clamped] {
                GraySlice::U8(g) => GraySlice::U8(g.crop(r0, c0, tile_size, tile_size)),
                GraySlice::U16(g) => GraySlice::U16(g.crop(r0, c0, tile_size, tile_size)),
            }
        })
        .collect();

    let center_annotation = match center_annotation {
        None => None,
        Some(mask) => {
            if mask.raster.shape() != (h, w) {
                return Err(CoreError::ShapeMismatch(
                    mask.height(),
                    mask.width(),
                    h,
                    w,
                ));
            }
            Some(mask.raster.crop(r0, c0, tile_size, tile_size))
        }
    };

    Ok(Snippet {
        tiles,
        center_slice,
        origin,
        tile_size,
        center_annotation,
    })
}

/// Per-pixel mean of overlapping tile planes.
///
/// Where every covering tile holds the same value the mean is returned as
/// that exact value, so a tiled-then-stitched mask reproduces its source
/// bit for bit. A pixel covered by no tile violates the grid contract and
/// is an error.
pub fn stitch_values<F: Scalar>(
    tiles: &[((usize, usize), Grid<F>)],
    height: usize,
    width: usize,
) -> Result<Grid<F>> {
    let mut sum = vec![F::zero(); height * width];
    let mut count = vec![0u32; height * width];
    let mut first = vec![F::zero(); height * width];
    let mut agree = vec![true; height * width];

    for ((r0, c0), tile) in tiles {
        let (th, tw) = tile.shape();
        if r0 + th > height || c0 + tw > width {
            return Err(CoreError::InvalidParam(format!(
                "tile at ({r0}, {c0}) sized {th}x{tw} leaves the {height}x{width} target"
            )));
        }
        for tr in 0..th {
            let base = (r0 + tr) * width + c0;
            let row = &tile.as_slice()[tr * tw..(tr + 1) * tw];
            for (tc, &v) in row.iter().enumerate() {
                let i = base + tc;
                if count[i] == 0 {
                    first[i] = v;
                } else if v != first[i] {
                    agree[i] = false;
                }
                sum[i] = sum[i] + v;
                count[i] += 1;
            }
        }
    }

    let mut out = Vec::with_capacity(height * width);
    for i in 0..height * width {
        if count[i] == 0 {
            return Err(CoreError::UncoveredPixel {
                row: i / width,
                col: i % width,
            });
        }
        let value = if agree[i] {
            first[i]
        } else {
            sum[i] / F::from_count(count[i] as usize)
        };
        out.push(value);
    }
    Ok(Grid::from_vec(height, width, out))
}

/// Stitches tile planes back into one binary slice mask.
///
/// The per-pixel mean is binarised at 0.5; an exact 0.5 (tiles split
/// evenly) counts as foreground.
pub fn stitch<F: Scalar>(
    tiles: &[((usize, usize), Grid<F>)],
    height: usize,
    width: usize,
    slice_index: usize,
) -> Result<MaskSlice> {
    let half = F::from_f64(0.5).expect("0.5 representable");
    let values = stitch_values(tiles, height, width)?;
    Ok(MaskSlice::new(values.map(|&v| v >= half), slice_index))
}
