//! Tile index: the JSON contract between `tile`, `stitch`, and the pipeline.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Describes one tiling of a slice stack and where each tile's file lives.
///
/// `tile` writes this next to its snippet strips; the pipeline writes one
/// whose entries name the per-tile masks the segment stage will produce.
/// `stitch` only consumes geometry and file names, so both uses share the
/// schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileIndex {
    pub tile_size: usize,
    pub step_k: usize,
    /// Slices per snippet (1 means plain single-slice tiles).
    pub depth: usize,
    /// Full slice height in pixels.
    pub height: usize,
    /// Full slice width in pixels.
    pub width: usize,
    pub num_slices: usize,
    pub row_origins: Vec<usize>,
    pub col_origins: Vec<usize>,
    pub entries: Vec<TileEntry>,
}

/// One tile: which slice it came from, where it sits, which file holds it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileEntry {
    /// File name relative to the index's directory.
    pub file: String,
    pub slice: usize,
    /// Window origin row (top).
    pub row: usize,
    /// Window origin column (left).
    pub col: usize,
}

impl TileIndex {
    /// Entries grouped by slice index, each group in origin order.
    pub fn by_slice(&self) -> BTreeMap<usize, Vec<&TileEntry>> {
        let mut groups: BTreeMap<usize, Vec<&TileEntry>> = BTreeMap::new();
        for entry in &self.entries {
            groups.entry(entry.slice).or_default().push(entry);
        }
        groups
    }
}

/// Canonical file name for the tile at (`slice`, `row`, `col`).
pub fn tile_file_name(prefix: &str, slice: usize, row: usize, col: usize) -> String {
    format!("{prefix}_s{slice:04}_r{row:04}_c{col:04}.png")
}
