//! End-to-end pipeline: tile -> segment -> stitch -> evaluate -> trace ->
//! reconstruct, driven by one JSON config.
//!
//! Stages hand off through files in `work_dir`, so any subset can be re-run
//! against the artifacts of an earlier invocation, and every stage writes a
//! small `stage_<name>.json` summary next to its artifact. Re-running with
//! the same config and inputs rewrites every artifact byte for byte.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use corallite_core::baseline::{ingest_probability_map, segment_slice, SegParams};
use corallite_core::eval::{evaluate_masks, EvalReport};
use corallite_core::grid::Grid;
use corallite_core::regions::Connectivity;
use corallite_core::tiler::{extract_snippet, plan_grid, stitch};
use corallite_core::tracer::{trace_stack, TraceOutput, TraceParams};
use corallite_core::volume::{
    load_gray, load_stack, save_gray, save_mask, GraySlice, Manifest, MaskSlice, SliceStack,
};

use crate::args::IdRange;
use crate::commands::{
    load_truth_mask, loft_tracks, png_files_sorted, read_json, read_masks_dir, write_json,
};
use crate::index::{tile_file_name, TileEntry, TileIndex};

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// Everything `run` needs, read from one JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Slice-stack manifest JSON.
    pub manifest: PathBuf,
    /// Directory all artifacts and summaries are written into.
    pub work_dir: PathBuf,
    /// Directory of per-slice truth PNGs (non-zero = foreground), in file
    /// name order. When absent the evaluate stage is skipped.
    #[serde(default)]
    pub truth_dir: Option<PathBuf>,
    #[serde(default)]
    pub tiling: TilingConfig,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub tracing: TraceParams<f64>,
    #[serde(default)]
    pub meshing: MeshingConfig,
    #[serde(default)]
    pub stages: StageToggles,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    pub tile_size: usize,
    pub step_k: usize,
    /// Slices per snippet; recorded in the index, segmentation uses the
    /// centre plane.
    pub depth: usize,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self { tile_size: 224, step_k: 112, depth: 5 }
    }
}

/// Where per-tile foreground probabilities come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentationConfig {
    /// Threshold every tile with the reference chain.
    Baseline(SegParams),
    /// Crop tiles out of pre-computed per-slice probability PNGs
    /// (file name order = slice order).
    Ingest { dir: PathBuf },
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig::Baseline(SegParams::default())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Weight of the topological term in the combined loss.
    pub topo_weight: f64,
    /// Pixel connectivity for component counting: 4 or 8.
    pub connectivity: u8,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { topo_weight: 1.0, connectivity: 8 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshingConfig {
    /// Vertices per cross-section ring.
    pub ring: usize,
    /// Cap tube ends with triangle fans.
    pub caps: bool,
    /// Inclusive `[start, end]` track-id filter.
    pub ids: Option<(u32, u32)>,
}

impl Default for MeshingConfig {
    fn default() -> Self {
        Self { ring: 16, caps: true, ids: None }
    }
}

/// Which stages to run; disabled stages read nothing and write nothing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub tile: bool,
    pub segment: bool,
    pub stitch: bool,
    pub evaluate: bool,
    pub trace: bool,
    pub reconstruct: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            tile: true,
            segment: true,
            stitch: true,
            evaluate: true,
            trace: true,
            reconstruct: true,
        }
    }
}

/// Rejects bad configuration before any stage touches the filesystem.
pub fn validate_config(config: &PipelineConfig) -> Result<Manifest> {
    let tiling = &config.tiling;
    if tiling.tile_size == 0 {
        bail!("tiling.tile_size must be positive");
    }
    if tiling.step_k == 0 {
        bail!("tiling.step_k must be positive");
    }
    if tiling.step_k > tiling.tile_size {
        bail!(
            "tiling.step_k ({}) must not exceed tiling.tile_size ({}); larger steps leave gaps between tiles",
            tiling.step_k,
            tiling.tile_size
        );
    }
    if tiling.depth == 0 || tiling.depth.is_multiple_of(2) {
        bail!("tiling.depth must be odd and positive, got {}", tiling.depth);
    }
    Connectivity::from_number(config.evaluation.connectivity)
        .context("evaluation.connectivity")?;
    if !(config.evaluation.topo_weight.is_finite() && config.evaluation.topo_weight >= 0.0) {
        bail!("evaluation.topo_weight must be finite and non-negative");
    }
    config.tracing.validate().context("tracing parameters")?;
    if config.meshing.ring < 3 {
        bail!("meshing.ring must be at least 3, got {}", config.meshing.ring);
    }
    if let Some((start, end)) = config.meshing.ids {
        if start > end {
            bail!("meshing.ids range [{start}, {end}] is empty");
        }
    }
    if let SegmentationConfig::Ingest { dir } = &config.segmentation {
        if !dir.is_dir() {
            bail!("segmentation ingest dir {} is not a directory", dir.display());
        }
    }
    if let Some(dir) = &config.truth_dir {
        if !dir.is_dir() {
            bail!("truth_dir {} is not a directory", dir.display());
        }
    }
    let manifest = Manifest::load(&config.manifest).context("loading manifest")?;
    let (h, w) = first_slice_shape(&manifest)?;
    if tiling.tile_size > h || tiling.tile_size > w {
        bail!(
            "tiling.tile_size ({}) exceeds the slice extent ({h}x{w})",
            tiling.tile_size
        );
    }
    Ok(manifest)
}

fn first_slice_shape(manifest: &Manifest) -> Result<(usize, usize)> {
    let first = manifest
        .slice_files
        .first()
        .context("manifest lists no slices")?;
    let slice = load_gray(&manifest.resolve(first)).context("loading first slice")?;
    Ok(slice.shape())
}

// ---------------------------------------------------------------------------
// stage summaries
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct TileSummary {
    tile_size: usize,
    step_k: usize,
    depth: usize,
    num_slices: usize,
    tiles_per_slice: usize,
    index_file: String,
}

#[derive(Debug, Serialize)]
struct SegmentSummary {
    source: String,
    tiles_written: usize,
}

#[derive(Debug, Serialize)]
struct StitchSummary {
    slices_written: usize,
}

#[derive(Debug, Serialize)]
struct EvaluateSummary {
    skipped: bool,
    reason: Option<String>,
    slices: usize,
    mean_dsc_full: Option<f64>,
    mean_mdsc_tiles: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TraceSummary {
    tracks: usize,
    short_tracks: usize,
}

#[derive(Debug, Serialize)]
struct ReconstructSummary {
    corallites: usize,
    skipped_short: usize,
    vertices: usize,
    triangles: usize,
}

/// Full evaluation artifact: one report per slice plus the field-wise mean.
#[derive(Debug, Serialize, Deserialize)]
pub struct StackReport {
    pub per_slice: Vec<EvalReport<f64>>,
    pub mean: EvalReport<f64>,
}

fn mean_report(reports: &[EvalReport<f64>]) -> EvalReport<f64> {
    let n = reports.len().max(1) as f64;
    let sum = |f: fn(&EvalReport<f64>) -> f64| reports.iter().map(f).sum::<f64>() / n;
    EvalReport {
        mdsc_tiles: sum(|r| r.mdsc_tiles),
        dsc_full: sum(|r| r.dsc_full),
        topo_score: sum(|r| r.topo_score),
        loss_bce: sum(|r| r.loss_bce),
        loss_dice: sum(|r| r.loss_dice),
        loss_topo: sum(|r| r.loss_topo),
        loss_total: sum(|r| r.loss_total),
        count_error: sum(|r| r.count_error),
    }
}

// ---------------------------------------------------------------------------
// the pipeline
// ---------------------------------------------------------------------------

/// What `run` did: which stages ran and where the artifacts live.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub stages_run: Vec<String>,
    pub stages_skipped: Vec<String>,
    pub work_dir: PathBuf,
}

/// Runs every enabled stage in order. Fails fast; the error names the stage.
pub fn run_pipeline(config: &PipelineConfig, verbose: bool) -> Result<RunOutcome> {
    let manifest = validate_config(config).context("stage config")?;
    fs::create_dir_all(&config.work_dir)
        .with_context(|| format!("creating {}", config.work_dir.display()))?;

    let mut outcome = RunOutcome {
        stages_run: Vec::new(),
        stages_skipped: Vec::new(),
        work_dir: config.work_dir.clone(),
    };
    let mut note = |name: &str, ran: bool| {
        if ran {
            outcome.stages_run.push(name.to_owned());
        } else {
            outcome.stages_skipped.push(name.to_owned());
        }
        if verbose {
            eprintln!("stage {name}: {}", if ran { "done" } else { "skipped" });
        }
    };

    // The stack feeds both tile and segment; load it once, lazily.
    let mut stack_cache: Option<SliceStack> = None;
    let stack = |cache: &mut Option<SliceStack>| -> Result<()> {
        if cache.is_none() {
            *cache = Some(load_stack(&manifest).context("loading slice stack")?);
        }
        Ok(())
    };

    if config.stages.tile {
        stack(&mut stack_cache).context("stage tile")?;
        stage_tile(config, stack_cache.as_ref().unwrap()).context("stage tile")?;
        note("tile", true);
    } else {
        note("tile", false);
    }

    if config.stages.segment {
        stack(&mut stack_cache).context("stage segment")?;
        stage_segment(config, stack_cache.as_ref().unwrap()).context("stage segment")?;
        note("segment", true);
    } else {
        note("segment", false);
    }

    if config.stages.stitch {
        stage_stitch(config).context("stage stitch")?;
        note("stitch", true);
    } else {
        note("stitch", false);
    }

    if config.stages.evaluate {
        stage_evaluate(config).context("stage evaluate")?;
        note("evaluate", true);
    } else {
        note("evaluate", false);
    }

    if config.stages.trace {
        stage_trace(config).context("stage trace")?;
        note("trace", true);
    } else {
        note("trace", false);
    }

    if config.stages.reconstruct {
        stage_reconstruct(config, &manifest).context("stage reconstruct")?;
        note("reconstruct", true);
    } else {
        note("reconstruct", false);
    }

    Ok(outcome)
}

fn index_path(config: &PipelineConfig) -> PathBuf {
    config.work_dir.join("tiles_index.json")
}

fn tile_masks_dir(config: &PipelineConfig) -> PathBuf {
    config.work_dir.join("tile_masks")
}

fn masks_dir(config: &PipelineConfig) -> PathBuf {
    config.work_dir.join("masks")
}

fn stage_tile(config: &PipelineConfig, stack: &SliceStack) -> Result<()> {
    let tiling = &config.tiling;
    let grid = plan_grid(stack.height(), stack.width(), tiling.tile_size, tiling.step_k)?;
    let origins = grid.origins();
    let mut entries = Vec::with_capacity(stack.depth() * origins.len());
    for slice in 0..stack.depth() {
        for &(row, col) in &origins {
            entries.push(TileEntry {
                file: tile_file_name("tile", slice, row, col),
                slice,
                row,
                col,
            });
        }
    }
    let index = TileIndex {
        tile_size: tiling.tile_size,
        step_k: tiling.step_k,
        depth: tiling.depth,
        height: stack.height(),
        width: stack.width(),
        num_slices: stack.depth(),
        row_origins: grid.row_origins.clone(),
        col_origins: grid.col_origins.clone(),
        entries,
    };
    write_json(&index_path(config), &index)?;
    write_json(
        &config.work_dir.join("stage_tile.json"),
        &TileSummary {
            tile_size: tiling.tile_size,
            step_k: tiling.step_k,
            depth: tiling.depth,
            num_slices: stack.depth(),
            tiles_per_slice: origins.len(),
            index_file: "tiles_index.json".to_owned(),
        },
    )
}

fn stage_segment(config: &PipelineConfig, stack: &SliceStack) -> Result<()> {
    let index: TileIndex = read_json(&index_path(config))?;
    let dir = tile_masks_dir(config);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let source;
    match &config.segmentation {
        SegmentationConfig::Baseline(params) => {
            source = "baseline".to_owned();
            use rayon::prelude::*;
            let masks: Vec<Grid<bool>> = index
                .entries
                .par_iter()
                .map(|e| {
                    let snippet =
                        extract_snippet(stack, e.slice, (e.row, e.col), index.tile_size, 1, None)?;
                    segment_slice(&snippet.tiles[0], params)
                })
                .collect::<corallite_core::error::Result<_>>()?;
            for (entry, raster) in index.entries.iter().zip(masks) {
                save_mask(&MaskSlice::new(raster, entry.slice), &dir.join(&entry.file))?;
            }
        }
        SegmentationConfig::Ingest { dir: prob_dir } => {
            source = format!("ingest:{}", prob_dir.display());
            let files = png_files_sorted(prob_dir)?;
            if files.len() != index.num_slices {
                bail!(
                    "ingest dir holds {} probability slices, the index expects {}",
                    files.len(),
                    index.num_slices
                );
            }
            let probs: Vec<Grid<f64>> = files
                .iter()
                .map(|p| Ok(ingest_probability_map(&load_gray(p)?)))
                .collect::<Result<_>>()?;
            for entry in &index.entries {
                let plane = &probs[entry.slice];
                if plane.height() < entry.row + index.tile_size
                    || plane.width() < entry.col + index.tile_size
                {
                    bail!(
                        "probability slice {} is smaller than the tile at ({}, {})",
                        entry.slice,
                        entry.row,
                        entry.col
                    );
                }
                let crop = plane.crop(entry.row, entry.col, index.tile_size, index.tile_size);
                let quantised =
                    crop.map(|&p| (p.clamp(0.0, 1.0) * f64::from(u16::MAX)).round() as u16);
                save_gray(&GraySlice::U16(quantised), &dir.join(&entry.file))?;
            }
        }
    }

    write_json(
        &config.work_dir.join("stage_segment.json"),
        &SegmentSummary { source, tiles_written: index.entries.len() },
    )
}

fn stage_stitch(config: &PipelineConfig) -> Result<()> {
    let index: TileIndex = read_json(&index_path(config))?;
    let tiles_dir = tile_masks_dir(config);
    let out = masks_dir(config);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let groups = index.by_slice();
    for (&slice, entries) in &groups {
        let mut tiles = Vec::with_capacity(entries.len());
        for entry in entries {
            let gray = load_gray(&tiles_dir.join(&entry.file))
                .with_context(|| format!("loading tile mask {}", entry.file))?;
            tiles.push(((entry.row, entry.col), ingest_probability_map(&gray)));
        }
        let mask = stitch(&tiles, index.height, index.width, slice)?;
        save_mask(&mask, &out.join(format!("mask_{slice:04}.png")))?;
    }

    write_json(
        &config.work_dir.join("stage_stitch.json"),
        &StitchSummary { slices_written: groups.len() },
    )
}

fn stage_evaluate(config: &PipelineConfig) -> Result<()> {
    let summary_path = config.work_dir.join("stage_evaluate.json");
    let Some(truth_dir) = &config.truth_dir else {
        return write_json(
            &summary_path,
            &EvaluateSummary {
                skipped: true,
                reason: Some("no truth_dir configured".to_owned()),
                slices: 0,
                mean_dsc_full: None,
                mean_mdsc_tiles: None,
            },
        );
    };

    let masks = read_masks_dir(&masks_dir(config))?;
    let truth_files = png_files_sorted(truth_dir)?;
    if truth_files.len() != masks.len() {
        bail!(
            "{} predicted masks but {} truth slices",
            masks.len(),
            truth_files.len()
        );
    }
    let connectivity = Connectivity::from_number(config.evaluation.connectivity)?;
    let mut per_slice = Vec::with_capacity(masks.len());
    for (mask, truth_file) in masks.iter().zip(&truth_files) {
        let truth = load_truth_mask(truth_file)?;
        let tile = config.tiling.tile_size.min(truth.height()).min(truth.width());
        let step = config.tiling.step_k.min(tile);
        per_slice.push(evaluate_masks::<f64>(
            &mask.raster,
            &truth,
            tile,
            step,
            config.evaluation.topo_weight,
            connectivity,
        )?);
    }
    let mean = mean_report(&per_slice);
    let report = StackReport { per_slice, mean };
    write_json(&config.work_dir.join("report.json"), &report)?;
    write_json(
        &summary_path,
        &EvaluateSummary {
            skipped: false,
            reason: None,
            slices: report.per_slice.len(),
            mean_dsc_full: Some(report.mean.dsc_full),
            mean_mdsc_tiles: Some(report.mean.mdsc_tiles),
        },
    )
}

fn stage_trace(config: &PipelineConfig) -> Result<()> {
    let masks = read_masks_dir(&masks_dir(config))?;
    let output = trace_stack::<f64>(&masks, &config.tracing)?;
    write_json(&config.work_dir.join("tracks.json"), &output)?;
    write_json(
        &config.work_dir.join("stage_trace.json"),
        &TraceSummary {
            tracks: output.tracks.len(),
            short_tracks: output.short_tracks.len(),
        },
    )
}

fn stage_reconstruct(config: &PipelineConfig, manifest: &Manifest) -> Result<()> {
    let output: TraceOutput<f64> = read_json(&config.work_dir.join("tracks.json"))?;
    let ids = config
        .meshing
        .ids
        .map(|(start, end)| IdRange { start, end });
    let (meshes, skipped) = loft_tracks(
        &output,
        config.meshing.ring,
        manifest.pixel_pitch_or_default(),
        manifest.slice_spacing_or_default(),
        ids,
        config.meshing.caps,
    )?;
    corallite_core::mesher::export_obj(&meshes, &config.work_dir.join("colony.obj"))?;
    write_json(
        &config.work_dir.join("stage_reconstruct.json"),
        &ReconstructSummary {
            corallites: meshes.len(),
            skipped_short: skipped,
            vertices: meshes.iter().map(|(_, m)| m.vertices.len()).sum(),
            triangles: meshes.iter().map(|(_, m)| m.triangles.len()).sum(),
        },
    )
}
