//! Implementations of the single-stage subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use corallite_core::baseline::{ingest_probability_map, segment_slice, SegParams};
use corallite_core::eval::{error_map, evaluate_masks, render_error_map};
use corallite_core::grid::Grid;
use corallite_core::mesher::{loft_track, loft_track_uncapped, section_from_props, Mesh};
use corallite_core::phantom::{self, PhantomSpec};
use corallite_core::regions::{label_components, region_props, Connectivity};
use corallite_core::tiler::{extract_snippet, plan_grid, stitch};
use corallite_core::tracer::{trace_stack, TraceOutput, TraceParams};
use corallite_core::volume::{
    load_gray, load_mask, load_stack, save_gray, save_mask, GraySlice, Manifest, MaskSlice,
};

use crate::args;
use crate::index::{tile_file_name, TileEntry, TileIndex};

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

/// Writes `value` as pretty JSON with a trailing newline (byte-deterministic).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .with_context(|| format!("serialising {}", path.display()))?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// All `.png` files in `dir`, sorted by file name.
pub fn png_files_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("listing {}", dir.display()))?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .png files found in {}", dir.display());
    }
    Ok(files)
}

/// Loads a directory of binary masks; slice index = position in name order.
pub fn read_masks_dir(dir: &Path) -> Result<Vec<MaskSlice>> {
    png_files_sorted(dir)?
        .iter()
        .enumerate()
        .map(|(i, path)| {
            load_mask(path, i).with_context(|| format!("loading {}", path.display()))
        })
        .collect()
}

/// Loads a grayscale PNG of any supported bit depth as non-zero = foreground.
pub fn load_truth_mask(path: &Path) -> Result<Grid<bool>> {
    let slice = load_gray(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(match slice {
        GraySlice::U8(g) => g.map(|&v| v > 0),
        GraySlice::U16(g) => g.map(|&v| v > 0),
    })
}

/// Stacks snippet planes vertically into one strip image.
fn stack_strip(tiles: &[GraySlice]) -> Result<GraySlice> {
    let first = tiles.first().context("empty snippet")?;
    let (h, w) = first.shape();
    match first {
        GraySlice::U8(_) => {
            let mut data = Vec::with_capacity(tiles.len() * h * w);
            for tile in tiles {
                match tile {
                    GraySlice::U8(g) => data.extend_from_slice(g.as_slice()),
                    GraySlice::U16(_) => bail!("mixed bit depths within one snippet"),
                }
            }
            Ok(GraySlice::U8(Grid::from_vec(tiles.len() * h, w, data)))
        }
        GraySlice::U16(_) => {
            let mut data = Vec::with_capacity(tiles.len() * h * w);
            for tile in tiles {
                match tile {
                    GraySlice::U16(g) => data.extend_from_slice(g.as_slice()),
                    GraySlice::U8(_) => bail!("mixed bit depths within one snippet"),
                }
            }
            Ok(GraySlice::U16(Grid::from_vec(tiles.len() * h, w, data)))
        }
    }
}

fn verbose_note(verbose: bool, message: &str) {
    if verbose {
        eprintln!("{message}");
    }
}

// ---------------------------------------------------------------------------
// phantom
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TruthSidecar<'a> {
    tube_paths: &'a BTreeMap<u16, Vec<phantom::TubeSection>>,
    parents: &'a BTreeMap<u16, u16>,
    branch_events: Vec<phantom::BranchEvent>,
}

pub fn phantom_cmd(cmd: &args::PhantomArgs, verbose: bool) -> Result<()> {
    let spec: PhantomSpec = read_json(&cmd.spec)?;
    let (stack, truth) = phantom::generate(&spec).context("generating phantom")?;
    let truth_dir = cmd.out.join("truth");
    fs::create_dir_all(&truth_dir)
        .with_context(|| format!("creating {}", truth_dir.display()))?;

    let mut slice_files = Vec::with_capacity(stack.depth());
    for (i, slice) in stack.slices.iter().enumerate() {
        let name = format!("slice_{i:04}.png");
        save_gray(slice, &cmd.out.join(&name))?;
        slice_files.push(name);
        let labels = GraySlice::U16(truth.instance_labels[i].clone());
        save_gray(&labels, &truth_dir.join(format!("truth_{i:04}.png")))?;
    }

    write_json(
        &cmd.out.join("tube_paths.json"),
        &TruthSidecar {
            tube_paths: &truth.tube_paths,
            parents: &truth.parents,
            branch_events: truth.branch_events(),
        },
    )?;

    let manifest = Manifest {
        specimen_id: format!("phantom-{:016x}", spec.seed),
        axis_label: "growth".to_owned(),
        slice_spacing: Some(1.0),
        pixel_pitch: Some(1.0),
        slice_files,
        annotation_files: BTreeMap::new(),
        base_dir: PathBuf::new(),
    };
    manifest
        .save(&cmd.out.join("manifest.json"))
        .context("writing manifest")?;

    verbose_note(
        verbose,
        &format!(
            "phantom: {} slices, {} tubes -> {}",
            stack.depth(),
            truth.tube_paths.len(),
            cmd.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// tile
// ---------------------------------------------------------------------------

pub fn tile_cmd(cmd: &args::TileArgs, verbose: bool) -> Result<()> {
    if cmd.depth == 0 || cmd.depth.is_multiple_of(2) {
        bail!("--depth must be odd and positive, got {}", cmd.depth);
    }
    let manifest = Manifest::load(&cmd.manifest)?;
    let stack = load_stack(&manifest)?;
    let grid = plan_grid(stack.height(), stack.width(), cmd.tile_size, cmd.step_k)?;
    fs::create_dir_all(&cmd.out)
        .with_context(|| format!("creating {}", cmd.out.display()))?;

    let origins = grid.origins();
    let mut entries = Vec::with_capacity(stack.depth() * origins.len());
    for slice in 0..stack.depth() {
        for &(row, col) in &origins {
            let snippet = extract_snippet(&stack, slice, (row, col), cmd.tile_size, cmd.depth, None)?;
            let strip = stack_strip(&snippet.tiles)?;
            let file = tile_file_name("snippet", slice, row, col);
            save_gray(&strip, &cmd.out.join(&file))?;
            entries.push(TileEntry { file, slice, row, col });
        }
    }

    let index = TileIndex {
        tile_size: cmd.tile_size,
        step_k: cmd.step_k,
        depth: cmd.depth,
        height: stack.height(),
        width: stack.width(),
        num_slices: stack.depth(),
        row_origins: grid.row_origins.clone(),
        col_origins: grid.col_origins.clone(),
        entries,
    };
    write_json(&cmd.out.join("index.json"), &index)?;

    verbose_note(
        verbose,
        &format!(
            "tile: {} snippets ({} slices x {} windows) -> {}",
            index.entries.len(),
            stack.depth(),
            origins.len(),
            cmd.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

pub fn segment_cmd(cmd: &args::SegmentArgs, verbose: bool) -> Result<()> {
    let params: SegParams = match &cmd.params {
        Some(path) => read_json(path)?,
        None => SegParams::default(),
    };
    let manifest = Manifest::load(&cmd.manifest)?;
    let stack = load_stack(&manifest)?;
    fs::create_dir_all(&cmd.out)
        .with_context(|| format!("creating {}", cmd.out.display()))?;

    use rayon::prelude::*;
    let masks: Vec<Grid<bool>> = stack
        .slices
        .par_iter()
        .map(|slice| segment_slice(slice, &params))
        .collect::<corallite_core::error::Result<_>>()?;
    for (i, raster) in masks.into_iter().enumerate() {
        let mask = MaskSlice::new(raster, i);
        save_mask(&mask, &cmd.out.join(format!("mask_{i:04}.png")))?;
    }

    verbose_note(
        verbose,
        &format!("segment: {} slices -> {}", stack.depth(), cmd.out.display()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stitch
// ---------------------------------------------------------------------------

pub fn stitch_cmd(cmd: &args::StitchArgs, verbose: bool) -> Result<()> {
    let index: TileIndex = read_json(&cmd.index)?;
    fs::create_dir_all(&cmd.out)
        .with_context(|| format!("creating {}", cmd.out.display()))?;

    let groups = index.by_slice();
    for (&slice, entries) in &groups {
        let mut tiles = Vec::with_capacity(entries.len());
        for entry in entries {
            let path = cmd.pred.join(&entry.file);
            let gray = load_gray(&path)
                .with_context(|| format!("loading tile prediction {}", path.display()))?;
            if gray.shape() != (index.tile_size, index.tile_size) {
                bail!(
                    "{}: expected a {size}x{size} centre-slice prediction, found {}x{}",
                    path.display(),
                    gray.height(),
                    gray.width(),
                    size = index.tile_size
                );
            }
            tiles.push(((entry.row, entry.col), ingest_probability_map(&gray)));
        }
        let mask = stitch(&tiles, index.height, index.width, slice)?;
        save_mask(&mask, &cmd.out.join(format!("mask_{slice:04}.png")))?;
    }

    verbose_note(
        verbose,
        &format!("stitch: {} slices -> {}", groups.len(), cmd.out.display()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// regions
// ---------------------------------------------------------------------------

/// Renders region measurements as the canonical CSV table.
pub fn regions_csv(mask: &Grid<bool>, connectivity: Connectivity) -> String {
    let labeled = label_components(mask, connectivity);
    let props = region_props::<f64>(&labeled);
    let mut out = String::from("label,area,centroid_r,centroid_c,major,minor,orientation\n");
    for p in &props {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            p.label,
            p.area,
            p.centroid.0,
            p.centroid.1,
            p.major_axis_len,
            p.minor_axis_len,
            p.orientation
        )
        .expect("writing to String cannot fail");
    }
    out
}

pub fn regions_cmd(cmd: &args::RegionsArgs, verbose: bool) -> Result<()> {
    let connectivity = Connectivity::from_number(cmd.connectivity)?;
    let mask = load_mask(&cmd.mask, 0)?;
    let csv = regions_csv(&mask.raster, connectivity);
    let rows = csv.lines().count() - 1;
    fs::write(&cmd.out, csv).with_context(|| format!("writing {}", cmd.out.display()))?;
    verbose_note(
        verbose,
        &format!("regions: {} regions -> {}", rows, cmd.out.display()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// Clamps the default evaluation tile grid to the slice extent.
pub fn eval_grid_defaults(
    height: usize,
    width: usize,
    tile_size: Option<usize>,
    step_k: Option<usize>,
) -> (usize, usize) {
    let tile = tile_size.unwrap_or_else(|| 224.min(height).min(width)).max(1);
    let step = step_k.unwrap_or_else(|| (tile / 2).max(1));
    (tile, step)
}

pub fn evaluate_cmd(cmd: &args::EvaluateArgs, verbose: bool) -> Result<()> {
    let connectivity = Connectivity::from_number(cmd.connectivity)?;
    let pred = load_mask(&cmd.pred, 0)?.raster;
    let truth = load_truth_mask(&cmd.truth)?;
    let (tile_size, step_k) =
        eval_grid_defaults(truth.height(), truth.width(), cmd.tile_size, cmd.step_k);
    let report =
        evaluate_masks::<f64>(&pred, &truth, tile_size, step_k, cmd.topo_weight, connectivity)?;
    write_json(&cmd.report, &report)?;

    if let Some(path) = &cmd.error_map {
        let pred_labeled = label_components(&pred, connectivity);
        let truth_labeled = label_components(&truth, connectivity);
        let map = error_map::<f64>(&pred_labeled, &truth_labeled);
        render_error_map(&map, path)?;
    }

    verbose_note(
        verbose,
        &format!(
            "evaluate: dice {:.4}, tiled dice {:.4} -> {}",
            report.dsc_full,
            report.mdsc_tiles,
            cmd.report.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// trace
// ---------------------------------------------------------------------------

pub fn trace_cmd(cmd: &args::TraceArgs, verbose: bool) -> Result<()> {
    let params = TraceParams {
        gamma: cmd.gamma,
        gamma_units: cmd.gamma_units,
        beta: cmd.beta,
        min_track_len: cmd.min_len,
    };
    params.validate()?;
    let masks = read_masks_dir(&cmd.masks)?;
    let output = trace_stack::<f64>(&masks, &params)?;
    write_json(&cmd.out, &output)?;
    verbose_note(
        verbose,
        &format!(
            "trace: {} tracks ({} short) -> {}",
            output.tracks.len(),
            output.short_tracks.len(),
            cmd.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

/// Lofted corallite meshes keyed by track id, plus the count of tracks
/// skipped for having fewer than two sections.
pub type LoftedMeshes = (Vec<(u32, Mesh<f64>)>, usize);

/// Lofts every selected track.
pub fn loft_tracks(
    output: &TraceOutput<f64>,
    ring: usize,
    pitch: f64,
    spacing: f64,
    ids: Option<args::IdRange>,
    caps: bool,
) -> Result<LoftedMeshes> {
    let mut meshes = Vec::new();
    let mut skipped = 0usize;
    for track in &output.tracks {
        if let Some(range) = ids {
            if !range.contains(track.track_id) {
                continue;
            }
        }
        if track.sections.len() < 2 {
            skipped += 1;
            continue;
        }
        let sections: Vec<_> = track
            .sections
            .iter()
            .map(|s| section_from_props(&s.props, s.slice_index, pitch, spacing))
            .collect();
        let mesh = if caps {
            loft_track(&sections, ring)?
        } else {
            loft_track_uncapped(&sections, ring)?
        };
        meshes.push((track.track_id, mesh));
    }
    Ok((meshes, skipped))
}

pub fn reconstruct_cmd(cmd: &args::ReconstructArgs, verbose: bool) -> Result<()> {
    if cmd.ring < 3 {
        bail!("--ring must be at least 3, got {}", cmd.ring);
    }
    if !(cmd.pitch.is_finite() && cmd.pitch > 0.0) || !(cmd.spacing.is_finite() && cmd.spacing > 0.0)
    {
        bail!("--pitch and --spacing must be finite and positive");
    }
    let output: TraceOutput<f64> = read_json(&cmd.tracks)?;
    let (meshes, skipped) = loft_tracks(
        &output,
        cmd.ring,
        cmd.pitch,
        cmd.spacing,
        cmd.ids,
        !cmd.no_caps,
    )?;
    corallite_core::mesher::export_obj(&meshes, &cmd.out)?;
    verbose_note(
        verbose,
        &format!(
            "reconstruct: {} corallites ({} skipped as too short) -> {}",
            meshes.len(),
            skipped,
            cmd.out.display()
        ),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_grid_defaults_clamp_to_slice() {
        assert_eq!(eval_grid_defaults(512, 512, None, None), (224, 112));
        assert_eq!(eval_grid_defaults(128, 256, None, None), (128, 64));
        assert_eq!(eval_grid_defaults(128, 128, Some(32), None), (32, 16));
        assert_eq!(eval_grid_defaults(128, 128, Some(32), Some(8)), (32, 8));
        assert_eq!(eval_grid_defaults(1, 1, None, None), (1, 1));
    }

    #[test]
    fn regions_csv_golden_row() {
        // 3x2 full-true block at origin of a 5x5 mask.
        let mut mask = Grid::filled(5, 5, false);
        for r in 0..3 {
            for c in 0..2 {
                mask.set(r, c, true);
            }
        }
        let csv = regions_csv(&mask, Connectivity::Eight);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "label,area,centroid_r,centroid_c,major,minor,orientation"
        );
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "1");
        assert_eq!(fields[1], "6");
        assert_eq!(fields[2], "1.000000");
        assert_eq!(fields[3], "0.500000");
        assert!(lines.next().is_none());
    }

    #[test]
    fn strip_stacks_planes_in_order() {
        let a = GraySlice::U8(Grid::from_vec(2, 2, vec![1, 2, 3, 4]));
        let b = GraySlice::U8(Grid::from_vec(2, 2, vec![5, 6, 7, 8]));
        let strip = stack_strip(&[a, b]).unwrap();
        match strip {
            GraySlice::U8(g) => {
                assert_eq!(g.shape(), (4, 2));
                assert_eq!(g.as_slice(), &[1, 2, 3, 4, 5, 6, 7, 8]);
            }
            GraySlice::U16(_) => panic!("expected 8-bit strip"),
        }
    }

    #[test]
    fn strip_rejects_mixed_depths() {
        let a = GraySlice::U8(Grid::filled(2, 2, 0u8));
        let b = GraySlice::U16(Grid::filled(2, 2, 0u16));
        assert!(stack_strip(&[a, b]).is_err());
    }
}
