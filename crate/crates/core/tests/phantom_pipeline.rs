//! Pipeline-level guarantees on synthetic volumes: instance labels stay
//! separated in the binary view, the classical baseline recovers the
//! interiors, and tracing the truth masks recovers every tube.

use corallite_core::baseline::{segment_slice, SegParams, Threshold};
use corallite_core::phantom::{generate, PhantomSpec};
use corallite_core::regions::{label_components, Connectivity};
use corallite_core::tracer::{trace_stack, track_purity, GammaUnits, TraceParams};
use corallite_core::volume::MaskSlice;
use corallite_core::Grid;

fn spec(seed: u64, branch_prob: f64) -> PhantomSpec {
    PhantomSpec {
        seed,
        extent: (24, 128, 128),
        n_tubes: 5,
        radius_range: (4.0, 9.0),
        curvature: 1.5,
        branch_prob,
        noise_sigma: 6.0,
        wall_thickness: 2.0,
    }
}

fn truth_masks(truth: &corallite_core::phantom::PhantomTruth, depth: usize) -> Vec<MaskSlice> {
    (0..depth)
        .map(|s| MaskSlice::new(truth.binary_mask(s), s))
        .collect()
}

#[test]
fn interiors_of_distinct_tubes_never_touch() {
    for seed in [1, 2, 3] {
        let (_, truth) = generate(&spec(seed, 0.05)).unwrap();
        for labels in &truth.instance_labels {
            let (h, w) = labels.shape();
            for r in 0..h {
                for c in 0..w {
                    let id = *labels.get(r, c);
                    if id == 0 {
                        continue;
                    }
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                            if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                                continue;
                            }
                            let other = *labels.get(nr as usize, nc as usize);
                            assert!(
                                other == 0 || other == id,
                                "tubes {id} and {other} touch at ({r},{c}) seed {seed}"
                            );
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn binary_region_count_matches_recorded_sections() {
    // Wall separation means 8-connected labeling of the binary mask must
    // see exactly one region per recorded cross-section.
    for seed in [4, 5] {
        let (_, truth) = generate(&spec(seed, 0.05)).unwrap();
        for (s, labels) in truth.instance_labels.iter().enumerate() {
            let binary = labels.map(|&id| id > 0);
            let found = label_components(&binary, Connectivity::Eight).region_count;
            assert_eq!(found, truth.section_count(s), "slice {s} seed {seed}");
        }
    }
}

#[test]
fn baseline_recovers_phantom_interiors() {
    let (stack, truth) = generate(&spec(11, 0.0)).unwrap();
    let params = SegParams {
        blur_sigma: 0.5,
        threshold: Threshold::Fixed(80.0),
        invert: true,
        opening_radius: 1,
        min_area: 8,
    };
    let mut hit = 0usize;
    let mut truth_px = 0usize;
    let mut pred_px = 0usize;
    for (s, slice) in stack.slices.iter().enumerate() {
        let pred = segment_slice(slice, &params).unwrap();
        let want = truth.binary_mask(s);
        let (h, w) = pred.shape();
        for r in 0..h {
            for c in 0..w {
                let t = *want.get(r, c);
                let p = *pred.get(r, c);
                truth_px += t as usize;
                pred_px += p as usize;
                hit += (t && p) as usize;
            }
        }
    }
    assert!(truth_px > 0);
    let recall = hit as f64 / truth_px as f64;
    let precision = hit as f64 / pred_px as f64;
    assert!(recall >= 0.90, "recall {recall:.4}");
    assert!(precision >= 0.80, "precision {precision:.4}");
}

#[test]
fn tracing_truth_masks_recovers_every_tube() {
    let (stack, truth) = generate(&spec(21, 0.0)).unwrap();
    let params = TraceParams {
        gamma: 5.0,
        gamma_units: GammaUnits::Pixels,
        beta: 0.3,
        min_track_len: 3,
    };
    let out = trace_stack(&truth_masks(&truth, stack.depth()), &params).unwrap();
    assert_eq!(out.tracks.len(), 5);
    assert!(out.short_tracks.is_empty());
    assert_eq!(track_purity(&out.tracks, &truth), 1.0);
    for track in &out.tracks {
        assert_eq!(track.len(), stack.depth(), "founders span the whole stack");
    }
}

#[test]
fn branch_events_open_new_tracks_on_time() {
    let mut checked = 0;
    for seed in [31, 32, 33] {
        let (stack, truth) = generate(&spec(seed, 0.05)).unwrap();
        let events = truth.branch_events();
        let params = TraceParams {
            gamma: 5.0,
            gamma_units: GammaUnits::Pixels,
            beta: 0.3,
            min_track_len: 1,
        };
        let out = trace_stack(&truth_masks(&truth, stack.depth()), &params).unwrap();
        let starts: Vec<usize> = out
            .tracks
            .iter()
            .chain(&out.short_tracks)
            .filter_map(|t| t.start_slice())
            .collect();
        for event in &events {
            let found = starts
                .iter()
                .any(|&s| s > 0 && s.abs_diff(event.slice) <= 1);
            assert!(
                found,
                "seed {seed}: no track starts near branch slice {}",
                event.slice
            );
            checked += 1;
        }
    }
    assert!(checked > 0, "no branch events generated across seeds");
}

#[test]
fn noise_free_interiors_threshold_exactly() {
    let mut quiet = spec(41, 0.0);
    quiet.noise_sigma = 0.0;
    let (stack, truth) = generate(&quiet).unwrap();
    for (s, slice) in stack.slices.iter().enumerate() {
        let want = truth.binary_mask(s);
        let got: Grid<bool> = match slice {
            corallite_core::volume::GraySlice::U8(g) => {
                g.map(|&v| v == corallite_core::phantom::INTERIOR_VALUE)
            }
            corallite_core::volume::GraySlice::U16(_) => unreachable!("phantoms are 8-bit"),
        };
        assert_eq!(got, want, "slice {s}");
    }
}
