//! Command-line surface: one subcommand per pipeline stage plus `run`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use corallite_core::tracer::GammaUnits;

#[derive(Debug, Parser)]
#[command(
    name = "corallite",
    version,
    about = "Reconstructs individual corallites from micro-CT slice stacks",
    propagate_version = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Worker threads for slice-parallel work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Pipeline configuration file; required by `run`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print per-stage progress to stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic colony volume with exact per-voxel truth.
    Phantom(PhantomArgs),
    /// Cut overlapping snippet strips from a slice stack.
    Tile(TileArgs),
    /// Segment every manifest slice with the thresholding baseline.
    Segment(SegmentArgs),
    /// Fuse per-tile masks or probability maps back into slice masks.
    Stitch(StitchArgs),
    /// Measure connected regions of one mask into a CSV table.
    Regions(RegionsArgs),
    /// Score a predicted mask against a truth mask.
    Evaluate(EvaluateArgs),
    /// Link region sections across slices into corallite tracks.
    Trace(TraceArgs),
    /// Loft traced corallites into a grouped OBJ mesh.
    Reconstruct(ReconstructArgs),
    /// Run every stage end to end as described by --config.
    Run,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom description JSON (seed, extent, tube counts, ...).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory for slices, truth labels, and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Slice-stack manifest JSON.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Square window edge in pixels.
    #[arg(long, default_value_t = 224)]
    pub tile_size: usize,
    /// Offset between window origins in pixels.
    #[arg(long = "step", default_value_t = 112)]
    pub step_k: usize,
    /// Slices per snippet (odd; the centre slice is the target).
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    /// Output directory for snippet strips and the index JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Slice-stack manifest JSON.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Segmentation parameter JSON; defaults apply when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Output directory for per-slice mask PNGs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    /// Directory of per-tile predictions named like the index entries.
    #[arg(long)]
    pub pred: PathBuf,
    /// Tile index JSON produced by `tile` (or the pipeline).
    #[arg(long)]
    pub index: PathBuf,
    /// Output directory for stitched per-slice mask PNGs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegionsArgs {
    /// Mask PNG to measure (non-zero pixels are foreground).
    #[arg(long)]
    pub mask: PathBuf,
    /// Pixel connectivity: 4 or 8.
    #[arg(long, default_value_t = 8)]
    pub connectivity: u8,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted mask PNG.
    #[arg(long)]
    pub pred: PathBuf,
    /// Truth mask PNG (non-zero pixels are foreground).
    #[arg(long)]
    pub truth: PathBuf,
    /// Tile edge for the tiled-Dice grid (default: 224 clamped to the slice).
    #[arg(long)]
    pub tile_size: Option<usize>,
    /// Tile-grid step (default: half the tile edge).
    #[arg(long = "step")]
    pub step_k: Option<usize>,
    /// Weight of the topological term in the combined loss.
    #[arg(long, default_value_t = 1.0)]
    pub topo_weight: f64,
    /// Pixel connectivity for component counting: 4 or 8.
    #[arg(long, default_value_t = 8)]
    pub connectivity: u8,
    /// Output report JSON.
    #[arg(long)]
    pub report: PathBuf,
    /// Optional component-error heat map PNG.
    #[arg(long)]
    pub error_map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Directory of per-slice mask PNGs, ordered by file name.
    #[arg(long)]
    pub masks: PathBuf,
    /// Centroid gate: maximum centre distance between linked sections.
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    /// Units of --gamma: "pixels" or "normalised" (mean major axis).
    #[arg(long, default_value = "normalised", value_parser = parse_gamma_units)]
    pub gamma_units: GammaUnits,
    /// Overlap gate: minimum pixel IoU (exclusive) between linked sections.
    #[arg(long, default_value_t = 0.3)]
    pub beta: f64,
    /// Tracks shorter than this go to the diagnostics list.
    #[arg(long = "min-len", default_value_t = 3)]
    pub min_len: usize,
    /// Output tracks JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Tracks JSON produced by `trace`.
    #[arg(long)]
    pub tracks: PathBuf,
    /// Vertices per cross-section ring.
    #[arg(long, default_value_t = 16)]
    pub ring: usize,
    /// Pixel pitch: physical size of one pixel edge.
    #[arg(long, default_value_t = 1.0)]
    pub pitch: f64,
    /// Physical distance between consecutive slices.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// Output OBJ path.
    #[arg(long)]
    pub out: PathBuf,
    /// Only loft track ids in this inclusive range, e.g. "0..20000".
    #[arg(long, value_parser = parse_id_range)]
    pub ids: Option<IdRange>,
    /// Leave tube ends open instead of capping them.
    #[arg(long)]
    pub no_caps: bool,
}

/// Inclusive track-id range accepted by `reconstruct --ids`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdRange {
    pub start: u32,
    pub end: u32,
}

impl IdRange {
    pub fn contains(&self, id: u32) -> bool {
        self.start <= id && id <= self.end
    }
}

/// Parses "a..b" / "a..=b" (inclusive) or a single id "a".
pub fn parse_id_range(text: &str) -> Result<IdRange, String> {
    let parse_one = |s: &str| {
        s.trim()
            .parse::<u32>()
            .map_err(|_| format!("invalid id `{s}` in range `{text}`"))
    };
    let range = if let Some((a, b)) = text.split_once("..=") {
        IdRange {
            start: parse_one(a)?,
            end: parse_one(b)?,
        }
    } else if let Some((a, b)) = text.split_once("..") {
        IdRange {
            start: parse_one(a)?,
            end: parse_one(b)?,
        }
    } else {
        let id = parse_one(text)?;
        IdRange { start: id, end: id }
    };
    if range.start > range.end {
        return Err(format!("empty id range `{text}`"));
    }
    Ok(range)
}

pub fn parse_gamma_units(text: &str) -> Result<GammaUnits, String> {
    match text.to_ascii_lowercase().as_str() {
        "pixels" | "px" => Ok(GammaUnits::Pixels),
        "normalised" | "normalized" => Ok(GammaUnits::Normalised),
        other => Err(format!(
            "unknown gamma units `{other}` (expected `pixels` or `normalised`)"
        )),
    }
}
