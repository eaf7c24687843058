//! Cross-slice region matching into per-corallite tracks.
//!
//! A single forward pass walks the mask stack slice by slice. Regions on
//! slice `n` are matched against slice `n - 1` when their centroids are
//! close (`d < gamma`) and their pixel sets overlap (`IoU > beta`); matched
//! regions extend the previous region's track, unmatched regions open new
//! tracks. There is no gap bridging: a track that misses one slice is
//! closed for good.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::phantom::PhantomTruth;
use crate::regions::{label_components, region_props, Connectivity, RegionProps};
use crate::volume::MaskSlice;
use crate::Scalar;

/// Units of the centroid-distance gate `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaUnits {
    /// Raw pixel distance.
    Pixels,
    /// Fraction of the mean major-axis length of the candidate pair, so
    /// a gate of 0.3 reads "centroids within 30% of a typical diameter".
    Normalised,
}

/// Gates for linking a region to its counterpart on the previous slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceParams<F: Scalar> {
    pub gamma: F,
    pub gamma_units: GammaUnits,
    /// Minimum pixel-set IoU, exclusive.
    pub beta: F,
    /// Tracks with fewer sections land in the diagnostics list.
    pub min_track_len: usize,
}

impl<F: Scalar> Default for TraceParams<F> {
    fn default() -> Self {
        Self {
            gamma: F::from_f64(0.3).unwrap(),
            gamma_units: GammaUnits::Normalised,
            beta: F::from_f64(0.3).unwrap(),
            min_track_len: 3,
        }
    }
}

impl<F: Scalar> TraceParams<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > F::zero() && self.gamma.is_finite()) {
            return Err(CoreError::InvalidParam(format!(
                "gamma must be finite and positive, got {}",
                self.gamma
            )));
        }
        if !(self.beta >= F::zero() && self.beta <= F::one()) {
            return Err(CoreError::InvalidParam(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if self.min_track_len == 0 {
            return Err(CoreError::InvalidParam(
                "min_track_len must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One cross-section of a track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSection<F: Scalar> {
    pub slice_index: usize,
    pub props: RegionProps<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    /// Still extendable when the pass ended, i.e. present on the last slice.
    Open,
    Closed,
}

/// A traced corallite: one region per slice over a contiguous slice range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track<F: Scalar> {
    pub track_id: u32,
    /// Slice indices increase by exactly 1 between consecutive sections.
    pub sections: Vec<TrackSection<F>>,
    pub status: TrackStatus,
}

impl<F: Scalar> Track<F> {
    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn start_slice(&self) -> Option<usize> {
        self.sections.first().map(|s| s.slice_index)
    }
}

/// Tracks that met `min_track_len`, plus the short remainder for diagnosis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceOutput<F: Scalar> {
    pub tracks: Vec<Track<F>>,
    pub short_tracks: Vec<Track<F>>,
}

/// IoU of two raster-ordered pixel sets, by sorted merge.
fn pixel_iou<F: Scalar>(a: &[(u32, u32)], b: &[(u32, u32)]) -> F {
    if a.is_empty() || b.is_empty() {
        return F::zero();
    }
    let mut inter = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    F::from_count(inter) / F::from_count(union)
}

struct Candidate<F> {
    iou: F,
    dist: F,
    curr: usize,
    prev: usize,
    curr_label: u32,
    prev_label: u32,
}

/// Match regions of the current slice to regions of the previous one.
///
/// Returns, per current region, the index into `prev` it extends, or
/// `None` when no admissible counterpart survives the one-to-one greedy
/// assignment. A pair is admissible iff its centroid distance is under
/// `gamma` (in the configured units) and its pixel IoU exceeds `beta`;
/// admissible pairs are consumed in descending IoU order, ties broken by
/// smaller distance, then lower current label, then lower previous label.
pub fn match_slice_pair<F: Scalar>(
    curr: &[RegionProps<F>],
    prev: &[RegionProps<F>],
    params: &TraceParams<F>,
) -> Vec<Option<usize>> {
    let half = F::from_f64(0.5).unwrap();
    let mut candidates: Vec<Candidate<F>> = Vec::new();
    for (ci, c) in curr.iter().enumerate() {
        for (pi, p) in prev.iter().enumerate() {
            let iou = pixel_iou::<F>(&c.pixels, &p.pixels);
            if iou <= params.beta {
                continue;
            }
            let dr = c.centroid.0 - p.centroid.0;
            let dc = c.centroid.1 - p.centroid.1;
            let dist = (dr * dr + dc * dc).sqrt();
            let gate = match params.gamma_units {
                GammaUnits::Pixels => params.gamma,
                GammaUnits::Normalised => {
                    params.gamma * (c.major_axis_len + p.major_axis_len) * half
                }
            };
            if dist < gate {
                candidates.push(Candidate {
                    iou,
                    dist,
                    curr: ci,
                    prev: pi,
                    curr_label: c.label,
                    prev_label: p.label,
                });
            }
        }
    }
    // IoU and distance are finite by construction, so the ordering is total.
    candidates.sort_by(|a, b| {
        b.iou
            .partial_cmp(&a.iou)
            .unwrap()
            .then(a.dist.partial_cmp(&b.dist).unwrap())
            .then(a.curr_label.cmp(&b.curr_label))
            .then(a.prev_label.cmp(&b.prev_label))
    });

    let mut assignment = vec![None; curr.len()];
    let mut prev_taken = vec![false; prev.len()];
    for cand in &candidates {
        if assignment[cand.curr].is_none() && !prev_taken[cand.prev] {
            assignment[cand.curr] = Some(cand.prev);
            prev_taken[cand.prev] = true;
        }
    }
    assignment
}

/// Trace a stack of binary masks into corallite tracks.
///
/// Masks must share one raster shape and carry consecutive slice indices.
/// Regions are labeled with 8-connectivity on each slice, then linked
/// forward with [`match_slice_pair`]. Track ids start at 1 in creation
/// order, which makes the output deterministic for fixed inputs.
pub fn trace_stack<F: Scalar>(
    masks: &[MaskSlice],
    params: &TraceParams<F>,
) -> Result<TraceOutput<F>> {
    params.validate()?;
    let mut finished: Vec<Track<F>> = Vec::new();
    if masks.is_empty() {
        return Ok(split_short(finished, params.min_track_len));
    }
    let (want_h, want_w) = masks[0].raster.shape();
    for (k, mask) in masks.iter().enumerate() {
        let (h, w) = mask.raster.shape();
        if (h, w) != (want_h, want_w) {
            return Err(CoreError::ShapeMismatch(want_h, want_w, h, w));
        }
        if k > 0 && mask.slice_index != masks[k - 1].slice_index + 1 {
            return Err(CoreError::InvalidParam(format!(
                "mask slice indices must be consecutive, got {} after {}",
                mask.slice_index,
                masks[k - 1].slice_index
            )));
        }
    }

    let mut next_id: u32 = 1;
    // One open track per region of the previous slice, same order.
    let mut open: Vec<Track<F>> = Vec::new();
    let mut prev_props: Vec<RegionProps<F>> = Vec::new();

    for mask in masks {
        let labeled = label_components(&mask.raster, Connectivity::Eight);
        let curr_props = region_props::<F>(&labeled);
        let assignment = match_slice_pair(&curr_props, &prev_props, params);

        let mut next_open: Vec<Track<F>> = Vec::with_capacity(curr_props.len());
        let mut extended = vec![false; open.len()];
        for (ci, props) in curr_props.iter().enumerate() {
            let section = TrackSection {
                slice_index: mask.slice_index,
                props: props.clone(),
            };
            match assignment[ci] {
                Some(pi) => {
                    extended[pi] = true;
                    let mut track = open[pi].clone();
                    track.sections.push(section);
                    next_open.push(track);
                }
                None => {
                    next_open.push(Track {
                        track_id: next_id,
                        sections: vec![section],
                        status: TrackStatus::Open,
                    });
                    next_id += 1;
                }
            }
        }
        for (pi, track) in open.into_iter().enumerate() {
            if !extended[pi] {
                let mut track = track;
                track.status = TrackStatus::Closed;
                finished.push(track);
            }
        }
        open = next_open;
        prev_props = curr_props;
    }
    finished.extend(open);
    finished.sort_by_key(|t| t.track_id);
    Ok(split_short(finished, params.min_track_len))
}

fn split_short<F: Scalar>(all: Vec<Track<F>>, min_len: usize) -> TraceOutput<F> {
    let (tracks, short_tracks) = all.into_iter().partition(|t| t.len() >= min_len);
    TraceOutput {
        tracks,
        short_tracks,
    }
}

/// Fraction of sections assigned to their track's majority truth tube.
///
/// Each section votes for the truth tube id covering most of its pixels
/// (background does not vote); each track's majority id is the mode over
/// its sections. Sections outside the truth volume, or covering only
/// background, never count as pure. Zero tracks yield 0.0 by convention.
pub fn track_purity<F: Scalar>(tracks: &[Track<F>], truth: &PhantomTruth) -> f64 {
    let total: usize = tracks.iter().map(Track::len).sum();
    if total == 0 {
        return 0.0;
    }
    let mut matched = 0usize;
    for track in tracks {
        let section_ids: Vec<Option<u16>> = track
            .sections
            .iter()
            .map(|s| section_majority(s, truth))
            .collect();
        let mut counts = std::collections::BTreeMap::new();
        for id in section_ids.iter().flatten() {
            *counts.entry(*id).or_insert(0usize) += 1;
        }
        // BTreeMap iterates in id order, so ties resolve to the smaller id.
        let majority = counts
            .iter()
            .max_by_key(|&(_, &n)| n)
            .map(|(&id, _)| id);
        if let Some(majority) = majority {
            matched += section_ids
                .iter()
                .filter(|&&id| id == Some(majority))
                .count();
        }
    }
    matched as f64 / total as f64
}

fn section_majority<F: Scalar>(section: &TrackSection<F>, truth: &PhantomTruth) -> Option<u16> {
    let labels = truth.instance_labels.get(section.slice_index)?;
    let mut counts = std::collections::BTreeMap::new();
    for &(r, c) in &section.props.pixels {
        let id = *labels.get(r as usize, c as usize);
        if id > 0 {
            *counts.entry(id).or_insert(0usize) += 1;
        }
    }
    counts.iter().max_by_key(|&(_, &n)| n).map(|(&id, _)| id)
}
