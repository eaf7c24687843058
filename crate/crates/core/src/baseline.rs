//! Classical segmentation stand-in: blur, threshold, open, size-filter.
//!
//! This exists so the rest of the pipeline can run without a trained
//! model: any probability map produced elsewhere can be ingested instead
//! and flows through the same stitching and tracing stages.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::regions::{label_components, Connectivity};
use crate::volume::GraySlice;

/// Global threshold choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Compare against a fixed intensity in native units (0..=255 for
    /// 8-bit slices, 0..=65535 for 16-bit).
    Fixed(f64),
    /// Otsu's between-class variance maximiser over a 256-bin histogram.
    Otsu,
}

/// Knobs of the classical segmenter, applied in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegParams {
    /// Gaussian blur sigma in pixels; 0 disables smoothing.
    #[serde(default = "default_blur_sigma")]
    pub blur_sigma: f64,
    #[serde(default = "default_threshold")]
    pub threshold: Threshold,
    /// Keep pixels *below* the threshold instead of above it. Corallite
    /// interiors image darker than the surrounding skeleton, so phantom
    /// and scan workflows usually set this.
    #[serde(default)]
    pub invert: bool,
    /// Disk radius for morphological opening; 0 disables it.
    #[serde(default = "default_opening_radius")]
    pub opening_radius: usize,
    /// Connected components smaller than this are dropped.
    #[serde(default = "default_min_area")]
    pub min_area: usize,
}

fn default_blur_sigma() -> f64 {
    1.0
}
fn default_threshold() -> Threshold {
    Threshold::Otsu
}
fn default_opening_radius() -> usize {
    1
}
fn default_min_area() -> usize {
    8
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            blur_sigma: default_blur_sigma(),
            threshold: default_threshold(),
            invert: false,
            opening_radius: default_opening_radius(),
            min_area: default_min_area(),
        }
    }
}

/// Separable Gaussian blur with edge replication.
fn gaussian_blur(plane: &Grid<f64>, sigma: f64) -> Grid<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let (h, w) = plane.shape();
    let clamp = |v: i64, max: usize| v.clamp(0, max as i64 - 1) as usize;

    let mut rows = Grid::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let cc = clamp(c as i64 + ki as i64 - radius, w);
                acc += k * plane.get(r, cc);
            }
            rows.set(r, c, acc);
        }
    }
    let mut out = Grid::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let rr = clamp(r as i64 + ki as i64 - radius, h);
                acc += k * rows.get(rr, c);
            }
            out.set(r, c, acc);
        }
    }
    out
}

/// Otsu threshold over a 256-bin histogram, in native units.
///
/// Returns `None` when no split separates anything (constant plane), in
/// which case the segmenter emits an empty mask instead of an arbitrary
/// cut.
fn otsu_threshold(plane: &Grid<f64>, max_value: f64) -> Option<f64> {
    let mut histogram = [0u64; 256];
    for &v in plane.as_slice() {
        let bin = ((v / max_value) * 255.0).round().clamp(0.0, 255.0) as usize;
        histogram[bin] += 1;
    }
    let total: u64 = histogram.iter().sum();
    let total_f = total as f64;
    let global_mean: f64 = histogram
        .iter()
        .enumerate()
        .map(|(i, &n)| i as f64 * n as f64)
        .sum::<f64>()
        / total_f;

    let mut best_bin = None;
    let mut best_variance = 0.0;
    let mut weight0 = 0.0;
    let mut sum0 = 0.0;
    for (k, &count) in histogram.iter().enumerate().take(255) {
        weight0 += count as f64;
        sum0 += k as f64 * count as f64;
        let weight1 = total_f - weight0;
        if weight0 == 0.0 || weight1 == 0.0 {
            continue;
        }
        let mean0 = sum0 / weight0;
        let mean1 = (global_mean * total_f - sum0) / weight1;
        let variance = weight0 * weight1 * (mean0 - mean1).powi(2);
        if variance > best_variance {
            best_variance = variance;
            best_bin = Some(k);
        }
    }
    // Bin k* separates bins <= k* from bins above; convert the bin edge
    // back to native units so the >= comparison matches the binning.
    best_bin.map(|k| (k as f64 + 0.5) * max_value / 255.0)
}

fn disk_offsets(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut offsets = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                offsets.push((dr, dc));
            }
        }
    }
    offsets
}

/// Morphological opening with a disk: erosion then dilation. Pixels
/// outside the raster count as background.
fn open_disk(mask: &Grid<bool>, radius: usize) -> Grid<bool> {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disk_offsets(radius);
    let (h, w) = mask.shape();
    let inside = |r: i64, c: i64| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w;

    let mut eroded = Grid::filled(h, w, false);
    for r in 0..h {
        for c in 0..w {
            let keep = offsets.iter().all(|&(dr, dc)| {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                inside(rr, cc) && *mask.get(rr as usize, cc as usize)
            });
            eroded.set(r, c, keep);
        }
    }
    let mut dilated = Grid::filled(h, w, false);
    for r in 0..h {
        for c in 0..w {
            let hit = offsets.iter().any(|&(dr, dc)| {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                inside(rr, cc) && *eroded.get(rr as usize, cc as usize)
            });
            dilated.set(r, c, hit);
        }
    }
    dilated
}

fn drop_small_regions(mask: &Grid<bool>, min_area: usize) -> Grid<bool> {
    if min_area <= 1 {
        return mask.clone();
    }
    let labeled = label_components(mask, Connectivity::Eight);
    let mut areas = vec![0usize; labeled.region_count];
    for &l in labeled.labels.as_slice() {
        if l > 0 {
            areas[(l - 1) as usize] += 1;
        }
    }
    labeled
        .labels
        .map(|&l| l > 0 && areas[(l - 1) as usize] >= min_area)
}

/// Runs the classical pipeline on one grayscale raster (a slice or a
/// tile): blur, global threshold, optional inversion, disk opening,
/// minimum-area filter.
pub fn segment_slice(slice: &GraySlice, params: &SegParams) -> Result<Grid<bool>> {
    if params.blur_sigma < 0.0 || params.blur_sigma.is_nan() {
        return Err(CoreError::InvalidParam(format!(
            "blur_sigma must be non-negative, got {}",
            params.blur_sigma
        )));
    }
    if let Threshold::Fixed(v) = params.threshold {
        if !v.is_finite() {
            return Err(CoreError::InvalidParam("fixed threshold must be finite".into()));
        }
    }

    let plane = slice.to_f64();
    let blurred = if params.blur_sigma > 0.0 {
        gaussian_blur(&plane, params.blur_sigma)
    } else {
        plane
    };

    let threshold = match params.threshold {
        Threshold::Fixed(v) => Some(v),
        Threshold::Otsu => otsu_threshold(&blurred, slice.max_value()),
    };
    let Some(threshold) = threshold else {
        // Degenerate histogram: nothing separates, emit an empty mask.
        return Ok(Grid::filled(slice.height(), slice.width(), false));
    };

    let mut mask = blurred.map(|&v| v >= threshold);
    if params.invert {
        mask = mask.map(|&m| !m);
    }
    let opened = open_disk(&mask, params.opening_radius);
    Ok(drop_small_regions(&opened, params.min_area))
}

/// Normalises an externally produced 8- or 16-bit probability map to
/// `[0, 1]` by its format maximum.
pub fn ingest_probability_map(slice: &GraySlice) -> Grid<f64> {
    let max = slice.max_value();
    slice.to_f64().map(|&v| v / max)
}
