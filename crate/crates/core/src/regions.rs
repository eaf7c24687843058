//! Connected-component labeling and per-region ellipse statistics.
//!
//! Labeling is the classic two-pass union-find sweep. Final labels are
//! renumbered so that label order equals the raster-scan order of each
//! component's first pixel, which makes every downstream artifact
//! (CSV tables, track seeds, match tables) reproducible byte for byte.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::Scalar;

/// Pixel adjacency used when growing components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Edge neighbours only.
    Four,
    /// Edge and corner neighbours.
    Eight,
}

impl Connectivity {
    /// Parses the conventional numeric spelling (4 or 8).
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(CoreError::InvalidParam(format!(
                "connectivity must be 4 or 8, got {other}"
            ))),
        }
    }
}

/// Result of labeling one binary mask: 0 is background, components are
/// numbered 1..=region_count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMask {
    pub labels: Grid<u32>,
    pub region_count: usize,
}

/// Moment-derived summary of one connected component.
///
/// Axis lengths come from the eigenvalues of the second central moment
/// matrix, scaled so a solid ellipse recovers its true axes: a solid
/// ellipse with semi-axis `a` has variance `a^2 / 4` along that axis, so
/// the full axis length is `4 * sqrt(eigenvalue)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProps<F = f64> {
    pub label: u32,
    pub area: usize,
    /// `(row, col)` centre of mass.
    pub centroid: (F, F),
    pub major_axis_len: F,
    pub minor_axis_len: F,
    /// Angle of the major axis against the column axis, in `(-pi/2, pi/2]`;
    /// positive angles rotate towards increasing row.
    pub orientation: F,
    /// `(min_row, min_col, max_row, max_col)`, inclusive.
    pub bbox: (usize, usize, usize, usize),
    /// Member pixels in raster order.
    #[serde(skip)]
    pub pixels: Vec<(u32, u32)>,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // Index 0 stays reserved for background.
        Self { parent: vec![0] }
    }

    fn make_set(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // Keep the smaller provisional label as root; combined with the
            // raster-order relabeling pass this is not load-bearing, but it
            // keeps intermediate states easy to inspect.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels connected foreground components.
pub fn label_components(mask: &Grid<bool>, connectivity: Connectivity) -> LabeledMask {
    let (h, w) = mask.shape();
    let mut provisional = Grid::filled(h, w, 0u32);
    let mut sets = DisjointSet::new();

    for r in 0..h {
        for c in 0..w {
            if !*mask.get(r, c) {
                continue;
            }
            // Neighbours already visited by the raster scan.
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            if c > 0 && *mask.get(r, c - 1) {
                neighbours[n] = *provisional.get(r, c - 1);
                n += 1;
            }
            if r > 0 && *mask.get(r - 1, c) {
                neighbours[n] = *provisional.get(r - 1, c);
                n += 1;
            }
            if connectivity == Connectivity::Eight && r > 0 {
                if c > 0 && *mask.get(r - 1, c - 1) {
                    neighbours[n] = *provisional.get(r - 1, c - 1);
                    n += 1;
                }
                if c + 1 < w && *mask.get(r - 1, c + 1) {
                    neighbours[n] = *provisional.get(r - 1, c + 1);
                    n += 1;
                }
            }

            let label = if n == 0 {
                sets.make_set()
            } else {
                let mut min = neighbours[0];
                for &other in &neighbours[1..n] {
                    if other < min {
                        min = other;
                    }
                }
                for &other in &neighbours[..n] {
                    sets.union(min, other);
                }
                min
            };
            provisional.set(r, c, label);
        }
    }

    // Renumber roots in raster-scan order of first appearance.
    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut region_count = 0u32;
    let mut labels = Grid::filled(h, w, 0u32);
    for r in 0..h {
        for c in 0..w {
            let p = *provisional.get(r, c);
            if p == 0 {
                continue;
            }
            let root = sets.find(p);
            if final_of_root[root as usize] == 0 {
                region_count += 1;
                final_of_root[root as usize] = region_count;
            }
            labels.set(r, c, final_of_root[root as usize]);
        }
    }

    LabeledMask {
        labels,
        region_count: region_count as usize,
    }
}

struct MomentAcc {
    area: usize,
    sum_r: f64,
    sum_c: f64,
    sum_rr: f64,
    sum_cc: f64,
    sum_rc: f64,
    bbox: (usize, usize, usize, usize),
    pixels: Vec<(u32, u32)>,
}

impl MomentAcc {
    fn new() -> Self {
        Self {
            area: 0,
            sum_r: 0.0,
            sum_c: 0.0,
            sum_rr: 0.0,
            sum_cc: 0.0,
            sum_rc: 0.0,
            bbox: (usize::MAX, usize::MAX, 0, 0),
            pixels: Vec::new(),
        }
    }

    fn push(&mut self, r: usize, c: usize) {
        let (rf, cf) = (r as f64, c as f64);
        self.area += 1;
        self.sum_r += rf;
        self.sum_c += cf;
        self.sum_rr += rf * rf;
        self.sum_cc += cf * cf;
        self.sum_rc += rf * cf;
        self.bbox.0 = self.bbox.0.min(r);
        self.bbox.1 = self.bbox.1.min(c);
        self.bbox.2 = self.bbox.2.max(r);
        self.bbox.3 = self.bbox.3.max(c);
        self.pixels.push((r as u32, c as u32));
    }
}

/// Computes [`RegionProps`] for every component, ordered by label.
pub fn region_props<F: Scalar>(labeled: &LabeledMask) -> Vec<RegionProps<F>> {
    let mut accs: Vec<MomentAcc> = (0..labeled.region_count).map(|_| MomentAcc::new()).collect();
    for (r, c, &label) in labeled.labels.indexed_iter() {
        if label > 0 {
            accs[(label - 1) as usize].push(r, c);
        }
    }

    accs.into_iter()
        .enumerate()
        .map(|(i, acc)| {
            let n = acc.area as f64;
            let mean_r = acc.sum_r / n;
            let mean_c = acc.sum_c / n;
            // Central second moments; tiny negatives from cancellation are
            // clamped so sqrt stays defined.
            let mu_rr = (acc.sum_rr / n - mean_r * mean_r).max(0.0);
            let mu_cc = (acc.sum_cc / n - mean_c * mean_c).max(0.0);
            let mu_rc = acc.sum_rc / n - mean_r * mean_c;

            let trace = mu_cc + mu_rr;
            let discriminant = ((mu_cc - mu_rr).powi(2) + 4.0 * mu_rc * mu_rc).sqrt();
            let lambda_major = ((trace + discriminant) / 2.0).max(0.0);
            let lambda_minor = ((trace - discriminant) / 2.0).max(0.0);
            // The axis is headless, so the angle lives modulo pi; fold the
            // atan2 output into (-pi/2, pi/2]. A signed-zero cross moment
            // would otherwise flip -pi/2 against the equivalent +pi/2.
            let mut orientation = 0.5 * (2.0 * mu_rc).atan2(mu_cc - mu_rr);
            if orientation <= -std::f64::consts::FRAC_PI_2 {
                orientation += std::f64::consts::PI;
            }

            RegionProps {
                label: (i + 1) as u32,
                area: acc.area,
                centroid: (
                    F::from_f64(mean_r).expect("centroid fits scalar"),
                    F::from_f64(mean_c).expect("centroid fits scalar"),
                ),
                major_axis_len: F::from_f64(4.0 * lambda_major.sqrt()).expect("axis fits scalar"),
                minor_axis_len: F::from_f64(4.0 * lambda_minor.sqrt()).expect("axis fits scalar"),
                orientation: F::from_f64(orientation).expect("angle fits scalar"),
                bbox: acc.bbox,
                pixels: acc.pixels,
            }
        })
        .collect()
}

fn centroids(labeled: &LabeledMask) -> Vec<(f64, f64, f64)> {
    // (sum_r, sum_c, count) folded to centroid per label.
    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64); labeled.region_count];
    for (r, c, &label) in labeled.labels.indexed_iter() {
        if label > 0 {
            let e = &mut sums[(label - 1) as usize];
            e.0 += r as f64;
            e.1 += c as f64;
            e.2 += 1.0;
        }
    }
    sums.iter().map(|&(sr, sc, n)| (sr / n, sc / n, n)).collect()
}

/// Pairs every predicted component with a truth component.
///
/// A predicted region takes the truth region it shares the most pixels
/// with (ties: smaller centroid distance, then lower truth label). A
/// predicted region overlapping nothing falls back to the nearest truth
/// centroid. With no truth regions at all every entry is `None`.
pub fn match_regions(pred: &LabeledMask, truth: &LabeledMask) -> Vec<(u32, Option<u32>)> {
    assert_eq!(
        pred.labels.shape(),
        truth.labels.shape(),
        "matched masks must share a shape"
    );
    let pred_centroids = centroids(pred);
    let truth_centroids = centroids(truth);

    // overlap[p-1][l-1] = shared pixel count.
    let mut overlap = vec![vec![0usize; truth.region_count]; pred.region_count];
    for (p, t) in pred
        .labels
        .as_slice()
        .iter()
        .zip(truth.labels.as_slice().iter())
    {
        if *p > 0 && *t > 0 {
            overlap[(*p - 1) as usize][(*t - 1) as usize] += 1;
        }
    }

    let distance = |p: usize, l: usize| -> f64 {
        let (pr, pc, _) = pred_centroids[p];
        let (tr, tc, _) = truth_centroids[l];
        ((pr - tr).powi(2) + (pc - tc).powi(2)).sqrt()
    };

    (0..pred.region_count)
        .map(|p| {
            let label = (p + 1) as u32;
            if truth.region_count == 0 {
                return (label, None);
            }
            let best_overlap = overlap[p].iter().copied().max().unwrap_or(0);
            let candidates: Vec<usize> = if best_overlap > 0 {
                (0..truth.region_count)
                    .filter(|&l| overlap[p][l] == best_overlap)
                    .collect()
            } else {
                (0..truth.region_count).collect()
            };
            let best = candidates
                .into_iter()
                .map(|l| (distance(p, l), l))
                .min_by(|a, b| a.partial_cmp(b).expect("finite distances"))
                .map(|(_, l)| (l + 1) as u32);
            (label, best)
        })
        .collect()
}
