//! Component-aware error maps, topological loss and mask metrics.
//!
//! Plain overlap metrics hide merged or missing corallites: a prediction
//! that fuses two tubes can still score a high Dice value. The error map
//! scores each predicted component against the truth component it matches,
//! via an exponential area penalty, and the topological loss averages a
//! sigmoid of that map. Merging, splitting and hallucinating components
//! all raise the loss even when pixel overlap barely moves.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::regions::{label_components, match_regions, Connectivity, LabeledMask};
use crate::tiler::plan_grid;
use crate::volume::{save_gray, GraySlice};
use crate::Scalar;

/// Neumaier-compensated sum: deterministic to well below 1e-9 for the
/// raster sizes in play, independent of value magnitudes.
pub(crate) fn compensated_sum<F: Scalar>(values: impl Iterator<Item = F>) -> F {
    let mut sum = F::zero();
    let mut compensation = F::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation = compensation + ((sum - t) + v);
        } else {
            compensation = compensation + ((v - t) + sum);
        }
        sum = t;
    }
    sum + compensation
}

fn sigmoid<F: Scalar>(x: F) -> F {
    let one = F::one();
    if x >= F::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Area penalty for a predicted component against its matched truth
/// component: `min(|1 - exp((A_p - A_l) / A_p)|, 1)`.
///
/// Equal areas give exactly 0; a prediction with no truth counterpart
/// (`area_truth == 0`) gives exactly 1. `area_pred` must be positive,
/// which holds for any labeled component.
pub fn component_penalty<F: Scalar>(area_pred: usize, area_truth: usize) -> F {
    assert!(area_pred > 0, "a predicted component has at least one pixel");
    let ap = F::from_count(area_pred);
    let al = F::from_count(area_truth);
    let ratio = (ap - al) / ap;
    let penalty = (F::one() - ratio.exp()).abs();
    penalty.min(F::one())
}

/// Per-pixel component penalty plane for one prediction/truth pair.
#[derive(Debug, Clone)]
pub struct ErrorMap<F = f64> {
    pub values: Grid<F>,
    /// Optional identifiers of the pair that produced the map.
    pub source: Option<(String, String)>,
}

/// Builds the per-pixel error map from labeled prediction and truth.
///
/// Every pixel of a predicted component carries that component's penalty,
/// except pixels that also belong to the matched truth component, which
/// carry 0. Background carries 0. With an empty truth every predicted
/// pixel carries 1.
pub fn error_map<F: Scalar>(pred: &LabeledMask, truth: &LabeledMask) -> ErrorMap<F> {
    let matches = match_regions(pred, truth);

    let mut truth_area = vec![0usize; truth.region_count];
    for &t in truth.labels.as_slice() {
        if t > 0 {
            truth_area[(t - 1) as usize] += 1;
        }
    }
    let mut pred_area = vec![0usize; pred.region_count];
    for &p in pred.labels.as_slice() {
        if p > 0 {
            pred_area[(p - 1) as usize] += 1;
        }
    }

    // Penalty and matched truth label, indexed by pred label - 1.
    let per_region: Vec<(F, u32)> = matches
        .iter()
        .map(|&(p, matched)| {
            let ap = pred_area[(p - 1) as usize];
            match matched {
                Some(l) => (component_penalty(ap, truth_area[(l - 1) as usize]), l),
                None => (component_penalty(ap, 0), 0),
            }
        })
        .collect();

    let (h, w) = pred.labels.shape();
    let mut values = Grid::filled(h, w, F::zero());
    for (i, (&p, &t)) in pred
        .labels
        .as_slice()
        .iter()
        .zip(truth.labels.as_slice().iter())
        .enumerate()
    {
        if p == 0 {
            continue;
        }
        let (penalty, matched_label) = per_region[(p - 1) as usize];
        if matched_label == 0 || t != matched_label {
            values.as_mut_slice()[i] = penalty;
        }
    }

    ErrorMap {
        values,
        source: None,
    }
}

/// Topological loss: `(1 / 2N) * sum(sigmoid(E) - 0.5)` over the map.
///
/// Zero exactly for an all-zero map; bounded above by
/// `(sigmoid(1) - 0.5) / 2`, reached when every pixel errs maximally.
pub fn topo_loss<F: Scalar>(map: &ErrorMap<F>) -> F {
    let n = map.values.len();
    if n == 0 {
        return F::zero();
    }
    let half = F::from_f64(0.5).expect("0.5 representable");
    let sum = compensated_sum(map.values.as_slice().iter().map(|&e| sigmoid(e) - half));
    sum / (F::from_count(n) * F::from_count(2))
}

/// Topology score reported alongside overlap metrics: `1 - topo_loss`.
pub fn topo_score<F: Scalar>(map: &ErrorMap<F>) -> F {
    F::one() - topo_loss(map)
}

/// Dice-Sorensen coefficient of two binary masks. Two empty masks agree
/// perfectly and score 1.
pub fn dice<F: Scalar>(a: &Grid<bool>, b: &Grid<bool>) -> F {
    assert_eq!(a.shape(), b.shape(), "dice needs equally shaped masks");
    let mut intersection = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice().iter()) {
        intersection += usize::from(x && y);
        total += usize::from(x) + usize::from(y);
    }
    if total == 0 {
        return F::one();
    }
    F::from_count(2 * intersection) / F::from_count(total)
}

/// Probability clamp used by [`bce`]; keeps the log finite on saturated
/// predictions.
pub const BCE_EPSILON: f64 = 1e-7;

/// Mean binary cross-entropy of a probability plane against a mask.
pub fn bce<F: Scalar>(probs: &Grid<F>, truth: &Grid<bool>) -> F {
    assert_eq!(probs.shape(), truth.shape(), "bce needs equally shaped rasters");
    let n = probs.len();
    if n == 0 {
        return F::zero();
    }
    let eps = F::from_f64(BCE_EPSILON).expect("epsilon representable");
    let one = F::one();
    let sum = compensated_sum(
        probs
            .as_slice()
            .iter()
            .zip(truth.as_slice().iter())
            .map(|(&p, &t)| {
                let p = p.max(eps).min(one - eps);
                if t {
                    -p.ln()
                } else {
                    -(one - p).ln()
                }
            }),
    );
    sum / F::from_count(n)
}

/// The mixed segmentation loss and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<F = f64> {
    pub bce: F,
    /// `1 - dice` of the binarised prediction.
    pub dice: F,
    pub topo: F,
    pub total: F,
}

/// Mixed loss: `0.5 * (bce + dice) + topo_weight * topo`.
///
/// The prediction is binarised at 0.5 (ties foreground) for the Dice and
/// topology terms; BCE sees the raw probabilities. With `topo_weight` of
/// zero the result equals the plain mixture exactly.
pub fn combined_loss<F: Scalar>(
    pred_probs: &Grid<F>,
    truth: &Grid<bool>,
    topo_weight: F,
    connectivity: Connectivity,
) -> LossBreakdown<F> {
    let half = F::from_f64(0.5).expect("0.5 representable");
    let binarised = pred_probs.map(|&p| p >= half);

    let loss_bce = bce(pred_probs, truth);
    let loss_dice = F::one() - dice::<F>(&binarised, truth);
    let map = error_map::<F>(
        &label_components(&binarised, connectivity),
        &label_components(truth, connectivity),
    );
    let loss_topo = topo_loss(&map);

    LossBreakdown {
        bce: loss_bce,
        dice: loss_dice,
        topo: loss_topo,
        total: half * (loss_bce + loss_dice) + topo_weight * loss_topo,
    }
}

/// Relative component-count error `|R_pred - R_truth| / R_truth`.
///
/// Undefined when the truth has no regions; that case is an error rather
/// than a silent 0 or infinity.
pub fn count_error<F: Scalar>(pred_regions: usize, truth_regions: usize) -> Result<F> {
    if truth_regions == 0 {
        return Err(CoreError::EmptyTruth);
    }
    let diff = pred_regions.abs_diff(truth_regions);
    Ok(F::from_count(diff) / F::from_count(truth_regions))
}

/// Writes the error map as an 8-bit PNG, `round(255 * value)` per pixel.
pub fn render_error_map<F: Scalar>(map: &ErrorMap<F>, path: &Path) -> Result<()> {
    let bytes = map.values.map(|&v| {
        let scaled = (v.to_f64().unwrap_or(0.0) * 255.0).round();
        scaled.clamp(0.0, 255.0) as u8
    });
    save_gray(&GraySlice::U8(bytes), path)
}

/// Slice-level evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<F = f64> {
    /// Mean Dice over the evaluation tile grid.
    pub mdsc_tiles: F,
    /// Dice over the full slice.
    pub dsc_full: F,
    pub topo_score: F,
    pub loss_bce: F,
    pub loss_dice: F,
    pub loss_topo: F,
    pub loss_total: F,
    pub count_error: F,
}

/// Evaluates one predicted mask against full truth for the same slice.
///
/// `tile_size`/`step_k` define the tile grid behind `mdsc_tiles`; the
/// loss terms treat the binary prediction as a saturated probability
/// plane.
pub fn evaluate_masks<F: Scalar>(
    pred: &Grid<bool>,
    truth: &Grid<bool>,
    tile_size: usize,
    step_k: usize,
    topo_weight: F,
    connectivity: Connectivity,
) -> Result<EvalReport<F>> {
    if pred.shape() != truth.shape() {
        return Err(CoreError::ShapeMismatch(
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width(),
        ));
    }
    let grid = plan_grid(pred.height(), pred.width(), tile_size, step_k)?;
    let origins = grid.origins();
    let tile_dice = compensated_sum(origins.iter().map(|&(r, c)| {
        let p = pred.crop(r, c, tile_size, tile_size);
        let t = truth.crop(r, c, tile_size, tile_size);
        dice::<F>(&p, &t)
    }));
    let mdsc_tiles = tile_dice / F::from_count(origins.len());

    let probs = pred.map(|&v| if v { F::one() } else { F::zero() });
    let losses = combined_loss(&probs, truth, topo_weight, connectivity);

    let pred_labeled = label_components(pred, connectivity);
    let truth_labeled = label_components(truth, connectivity);
    let count_err = count_error(pred_labeled.region_count, truth_labeled.region_count)?;

    Ok(EvalReport {
        mdsc_tiles,
        dsc_full: dice(pred, truth),
        topo_score: F::one() - losses.topo,
        loss_bce: losses.bce,
        loss_dice: losses.dice,
        loss_topo: losses.topo,
        loss_total: losses.total,
        count_error: count_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> Grid<bool> {
        let h = rows.len();
        let w = rows[0].len();
        let mut grid = Grid::filled(h, w, false);
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                grid.set(r, c, ch == '#');
            }
        }
        grid
    }

    fn labeled(rows: &[&str]) -> LabeledMask {
        label_components(&mask_from(rows), Connectivity::Eight)
    }

    #[test]
    fn penalty_matches_closed_form_values() {
        // exp(1/3) - 1 for a 6-pixel prediction over a 4-pixel truth.
        let p: f64 = component_penalty(6, 4);
        assert!((p - 0.395_612_425_086_089_5).abs() < 1e-12);
        // 1 - exp(-1/2) for the reverse direction.
        let p: f64 = component_penalty(4, 6);
        assert!((p - 0.393_469_340_287_366_6).abs() < 1e-12);
    }

    #[test]
    fn penalty_extremes_are_exact() {
        assert_eq!(component_penalty::<f64>(17, 17), 0.0);
        assert_eq!(component_penalty::<f64>(1, 0), 1.0);
        assert_eq!(component_penalty::<f64>(1000, 0), 1.0);
        // Truth much larger than prediction approaches 1 from below while
        // exp keeps more than an ulp of headroom (here 1 - e^-19).
        let p: f64 = component_penalty(1, 20);
        assert!(p < 1.0 && p > 0.99);
        // Further out the difference from 1 rounds away entirely.
        assert_eq!(component_penalty::<f64>(1, 1000), 1.0);
    }

    #[test]
    fn penalty_is_generic_over_scalar() {
        let p32: f32 = component_penalty(6, 4);
        let p64: f64 = component_penalty(6, 4);
        assert!((f64::from(p32) - p64).abs() < 1e-6);
    }

    #[test]
    fn error_map_of_identical_masks_is_zero() {
        let rows = &["##..##", "##..##"];
        let map = error_map::<f64>(&labeled(rows), &labeled(rows));
        assert!(map.values.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(topo_loss(&map), 0.0);
    }

    #[test]
    fn error_map_scores_overhang_pixels_only() {
        // Prediction of 6 pixels covers the whole 4-pixel truth; the two
        // overhang pixels carry exp(1/3) - 1, the rest carry 0.
        let pred = labeled(&["######"]);
        let truth = labeled(&["####.."]);
        let map = error_map::<f64>(&pred, &truth);
        let expected = 0.395_612_425_086_089_5;
        for (_, c, &v) in map.values.indexed_iter() {
            if c < 4 {
                assert_eq!(v, 0.0);
            } else {
                assert!((v - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn error_map_with_empty_truth_is_all_ones_on_prediction() {
        let pred = labeled(&[".##.", ".##."]);
        let truth = labeled(&["....", "...."]);
        let map = error_map::<f64>(&pred, &truth);
        for (_, _, &v) in map.values.indexed_iter() {
            assert!(v == 0.0 || v == 1.0);
        }
        let ones = map.values.as_slice().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones, 4);
    }

    #[test]
    fn topo_loss_matches_hand_computed_plane() {
        // Five pixels at error 1 on a 10x10 map:
        // 5 * (sigmoid(1) - 0.5) / 200.
        let mut values = Grid::filled(10, 10, 0.0f64);
        for c in 0..5 {
            values.set(0, c, 1.0);
        }
        let map = ErrorMap {
            values,
            source: None,
        };
        let loss = topo_loss(&map);
        assert!((loss - 0.005_776_464_465_750_122).abs() < 1e-15);
    }

    #[test]
    fn topo_loss_ceiling_is_half_sigmoid_margin() {
        let map = ErrorMap {
            values: Grid::filled(8, 8, 1.0f64),
            source: None,
        };
        let loss = topo_loss(&map);
        assert!((loss - 0.115_529_289_315_002_45).abs() < 1e-15);
        assert!((topo_score(&map) - (1.0 - loss)).abs() < 1e-15);
    }

    #[test]
    fn removing_a_merging_bridge_strictly_lowers_topo_loss() {
        let truth = labeled(&["##.##"]);
        let merged = labeled(&["#####"]);
        let split = labeled(&["##.##"]);
        let loss_merged = topo_loss(&error_map::<f64>(&merged, &truth));
        let loss_split = topo_loss(&error_map::<f64>(&split, &truth));
        assert!(loss_merged > loss_split);
        assert_eq!(loss_split, 0.0);
    }

    #[test]
    fn dice_handles_empty_and_partial_overlap() {
        let empty = mask_from(&["...."]);
        assert_eq!(dice::<f64>(&empty, &empty), 1.0);
        let a = mask_from(&["##.."]);
        let b = mask_from(&[".##."]);
        assert_eq!(dice::<f64>(&a, &b), 0.5);
        let disjoint = mask_from(&["..##"]);
        assert_eq!(dice::<f64>(&a, &disjoint), 0.0);
        assert_eq!(dice::<f64>(&a, &a), 1.0);
    }

    #[test]
    fn bce_matches_log_identities() {
        let truth = mask_from(&["##", ".."]);
        let uniform = Grid::filled(2, 2, 0.5f64);
        assert!((bce(&uniform, &truth) - std::f64::consts::LN_2).abs() < 1e-15);

        let confident = Grid::filled(2, 2, 0.9f64);
        // Two foreground pixels at -ln(0.9), two background at -ln(0.1).
        let expected = (2.0 * (-(0.9f64).ln()) + 2.0 * (-(0.1f64).ln())) / 4.0;
        assert!((bce(&confident, &truth) - expected).abs() < 1e-12);
    }

    #[test]
    fn bce_clamp_keeps_saturated_predictions_finite() {
        let truth = mask_from(&["#"]);
        let wrong = Grid::filled(1, 1, 0.0f64);
        let loss = bce(&wrong, &truth);
        assert!((loss - (-BCE_EPSILON.ln())).abs() < 1e-9);
        let right = Grid::filled(1, 1, 1.0f64);
        assert!(bce(&right, &truth) > 0.0);
        assert!(bce(&right, &truth) < 2e-7);
    }

    #[test]
    fn combined_loss_reduces_to_plain_mixture_without_topo_weight() {
        let truth = mask_from(&["##..", "##.."]);
        let mut probs = Grid::filled(2, 4, 0.1f64);
        probs.set(0, 0, 0.9);
        probs.set(0, 1, 0.8);
        probs.set(1, 0, 0.7);
        let weighted = combined_loss(&probs, &truth, 0.1, Connectivity::Eight);
        let unweighted = combined_loss(&probs, &truth, 0.0, Connectivity::Eight);
        assert_eq!(unweighted.total, 0.5 * (unweighted.bce + unweighted.dice));
        assert!(
            (weighted.total - (0.5 * (weighted.bce + weighted.dice) + 0.1 * weighted.topo)).abs()
                < 1e-15
        );
        assert_eq!(weighted.bce, unweighted.bce);
    }

    #[test]
    fn perfect_prediction_yields_zero_dice_and_topo_terms() {
        let truth = mask_from(&["#..#", "#..#"]);
        let probs = truth.map(|&t| if t { 1.0f64 } else { 0.0 });
        let losses = combined_loss(&probs, &truth, 0.1, Connectivity::Eight);
        assert_eq!(losses.dice, 0.0);
        assert_eq!(losses.topo, 0.0);
        assert!(losses.bce < 2e-7);
    }

    #[test]
    fn count_error_cases() {
        assert_eq!(count_error::<f64>(10, 10).unwrap(), 0.0);
        assert!((count_error::<f64>(12, 10).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(count_error::<f64>(0, 5).unwrap(), 1.0);
        assert!(matches!(
            count_error::<f64>(3, 0).unwrap_err(),
            CoreError::EmptyTruth
        ));
    }

    #[test]
    fn rendered_map_quantises_to_rounded_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("em.png");
        let mut values = Grid::filled(1, 3, 0.0f64);
        values.set(0, 1, 0.395_612_425_086_089_5);
        values.set(0, 2, 1.0);
        render_error_map(
            &ErrorMap {
                values,
                source: None,
            },
            &path,
        )
        .unwrap();
        match crate::volume::load_gray(&path).unwrap() {
            GraySlice::U8(g) => assert_eq!(g.as_slice(), &[0, 101, 255]),
            _ => panic!("error map must render as 8-bit"),
        }
    }

    #[test]
    fn evaluate_masks_reports_consistent_fields() {
        let truth = mask_from(&[
            "##......",
            "##......",
            "......##",
            "......##",
        ]);
        let pred = mask_from(&[
            "##......",
            "##......",
            "........",
            "........",
        ]);
        let report = evaluate_masks::<f64>(&pred, &truth, 4, 4, 0.1, Connectivity::Eight).unwrap();
        assert!((report.dsc_full - 2.0 * 4.0 / (4.0 + 8.0)).abs() < 1e-15);
        // Left tile agrees perfectly, right tile misses everything.
        assert!((report.mdsc_tiles - 0.5).abs() < 1e-15);
        assert!((report.count_error - 0.5).abs() < 1e-15);
        assert!(report.topo_score > 0.88 && report.topo_score <= 1.0);
        assert!((report.loss_total
            - (0.5 * (report.loss_bce + report.loss_dice) + 0.1 * report.loss_topo))
            .abs()
            < 1e-15);
    }
}
