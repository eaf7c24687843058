//! Synthetic corallite volumes with exact per-voxel ground truth.
//!
//! Each phantom contains `n_tubes` roughly vertical tubes. A tube's
//! cross-section is a jittered ellipse: dark interior, bright wall, all
//! on a mid-grey skeleton background, optionally corrupted by Gaussian
//! noise. Truth instance labels mark interiors only; walls always
//! separate two interiors in the binary truth, so labeling a truth mask
//! recovers exactly the recorded cross-sections.
//!
//! Tubes are confined to disjoint territories so only a parent and the
//! child it branched can ever overlap. On its first slice a branch child
//! is stamped inside the parent (footprint IoU of at least 0.3), which is
//! what forces the tracer to open a fresh track: the child's region has a
//! plausible previous-slice match, but the parent claims it first.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::volume::{GraySlice, SliceStack};

/// Intensity of tube interiors.
pub const INTERIOR_VALUE: u8 = 40;
/// Intensity of tube walls.
pub const WALL_VALUE: u8 = 200;
/// Intensity of the skeleton between tubes.
pub const BACKGROUND_VALUE: u8 = 120;

/// Parameters of one synthetic volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(default)]
    pub seed: u64,
    /// `(depth, height, width)` in voxels.
    pub extent: (usize, usize, usize),
    pub n_tubes: usize,
    /// Base tube radius range in pixels; the minimum must be at least 2.
    #[serde(default = "default_radius_range")]
    pub radius_range: (f64, f64),
    /// Maximum centroid drift between consecutive slices, in pixels.
    #[serde(default = "default_curvature")]
    pub curvature: f64,
    /// Per-tube, per-slice branching probability; must stay below 0.1.
    #[serde(default)]
    pub branch_prob: f64,
    /// Standard deviation of additive Gaussian intensity noise.
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    /// Wall ring thickness in pixels.
    #[serde(default = "default_wall_thickness")]
    pub wall_thickness: f64,
}

fn default_radius_range() -> (f64, f64) {
    (4.0, 9.0)
}
fn default_curvature() -> f64 {
    1.5
}
fn default_noise_sigma() -> f64 {
    6.0
}
fn default_wall_thickness() -> f64 {
    2.0
}

/// Cross-section axis ratio is jittered within this bound.
const MAX_AXIS_RATIO: f64 = 1.45;
/// Branch children start at this fraction of the parent's base radius.
const CHILD_RADIUS_FACTOR: f64 = 0.66;
/// Per-slice relative jitter of the base radius.
const RADIUS_JITTER: f64 = 0.04;
/// Footprint IoU the child must share with its parent on the branch slice.
const BRANCH_MIN_IOU: f64 = 0.3;

/// One recorded tube cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSection {
    pub slice: usize,
    /// `(row, col)` analytic centre.
    pub centroid: (f64, f64),
    /// Equivalent circular radius, `sqrt(semi_major * semi_minor)`.
    pub radius: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub orientation: f64,
}

/// Everything the generator knows about the volume it painted.
#[derive(Debug, Clone)]
pub struct PhantomTruth {
    /// Per-slice instance rasters; 0 is background, otherwise a tube id.
    pub instance_labels: Vec<Grid<u16>>,
    /// Ordered sections per tube id.
    pub tube_paths: BTreeMap<u16, Vec<TubeSection>>,
    /// `child -> parent` for every branch event.
    pub parents: BTreeMap<u16, u16>,
}

/// One branch event: `child` first exists on `slice`, overlapping `parent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchEvent {
    pub child: u16,
    pub parent: u16,
    pub slice: usize,
}

impl PhantomTruth {
    /// Binary foreground (any tube interior) for one slice.
    pub fn binary_mask(&self, slice: usize) -> Grid<bool> {
        self.instance_labels[slice].map(|&id| id > 0)
    }

    /// Number of cross-sections recorded for one slice.
    pub fn section_count(&self, slice: usize) -> usize {
        self.tube_paths
            .values()
            .filter(|path| path.iter().any(|s| s.slice == slice))
            .count()
    }

    /// All branch events, ordered by child id.
    pub fn branch_events(&self) -> Vec<BranchEvent> {
        self.parents
            .iter()
            .map(|(&child, &parent)| BranchEvent {
                child,
                parent,
                slice: self.tube_paths[&child][0].slice,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    center: (f64, f64),
    semi_major: f64,
    semi_minor: f64,
    orientation: f64,
}

impl Ellipse {
    /// Squared normalised radius: <= 1 inside.
    fn norm2(&self, row: f64, col: f64) -> f64 {
        let dy = row - self.center.0;
        let dx = col - self.center.1;
        let (sin, cos) = self.orientation.sin_cos();
        let u = (dx * cos + dy * sin) / self.semi_major;
        let v = (-dx * sin + dy * cos) / self.semi_minor;
        u * u + v * v
    }

    fn grown(&self, by: f64) -> Ellipse {
        Ellipse {
            semi_major: self.semi_major + by,
            semi_minor: self.semi_minor + by,
            ..*self
        }
    }

    fn bbox(&self, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let reach = self.semi_major + 1.0;
        let r0 = (self.center.0 - reach).floor().max(0.0) as usize;
        let c0 = (self.center.1 - reach).floor().max(0.0) as usize;
        let r1 = ((self.center.0 + reach).ceil() as usize).min(h - 1);
        let c1 = ((self.center.1 + reach).ceil() as usize).min(w - 1);
        (r0, c0, r1, c1)
    }
}

/// Pixel-footprint IoU of two ellipses (interiors only).
fn footprint_iou(a: &Ellipse, b: &Ellipse, h: usize, w: usize) -> f64 {
    let (ar0, ac0, ar1, ac1) = a.bbox(h, w);
    let (br0, bc0, br1, bc1) = b.bbox(h, w);
    let (r0, c0) = (ar0.min(br0), ac0.min(bc0));
    let (r1, c1) = (ar1.max(br1), ac1.max(bc1));
    let mut inter = 0usize;
    let mut union = 0usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let in_a = a.norm2(r as f64, c as f64) <= 1.0;
            let in_b = b.norm2(r as f64, c as f64) <= 1.0;
            inter += usize::from(in_a && in_b);
            union += usize::from(in_a || in_b);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

struct TubeState {
    id: u16,
    /// Territory anchor: tubes never drift further than `roam` from it.
    anchor: (f64, f64),
    center: (f64, f64),
    base_radius: f64,
    ratio: f64,
    orientation: f64,
    born_at: usize,
    parent: Option<u16>,
    has_branched: bool,
}

fn validate(spec: &PhantomSpec) -> Result<()> {
    let (d, h, w) = spec.extent;
    if d == 0 || h == 0 || w == 0 {
        return Err(CoreError::InvalidParam("extent axes must be positive".into()));
    }
    if spec.n_tubes == 0 || spec.n_tubes > 10_000 {
        return Err(CoreError::InvalidParam(format!(
            "n_tubes must be in 1..=10000, got {}",
            spec.n_tubes
        )));
    }
    let (rmin, rmax) = spec.radius_range;
    if !(rmin >= 2.0 && rmax >= rmin) {
        return Err(CoreError::InvalidParam(format!(
            "radius_range must satisfy 2 <= min <= max, got ({rmin}, {rmax})"
        )));
    }
    if !(0.0..0.1).contains(&spec.branch_prob) {
        return Err(CoreError::InvalidParam(format!(
            "branch_prob must be in [0, 0.1), got {}",
            spec.branch_prob
        )));
    }
    if spec.curvature < 0.0
        || spec.noise_sigma < 0.0
        || spec.curvature.is_nan()
        || spec.noise_sigma.is_nan()
    {
        return Err(CoreError::InvalidParam(
            "curvature and noise_sigma must be non-negative".into(),
        ));
    }
    if spec.wall_thickness < 1.0 || spec.wall_thickness.is_nan() {
        return Err(CoreError::InvalidParam(format!(
            "wall_thickness must be at least 1, got {}",
            spec.wall_thickness
        )));
    }
    Ok(())
}

fn section_ellipse(state: &TubeState, radius_scale: f64) -> Ellipse {
    let r = state.base_radius * radius_scale;
    Ellipse {
        center: state.center,
        semi_major: r * state.ratio.sqrt(),
        semi_minor: r / state.ratio.sqrt(),
        orientation: state.orientation,
    }
}

/// Clamps `point` into the disk of radius `roam` around `anchor`.
/// Projection onto a convex set is non-expansive, so a drift step of
/// length at most `curvature` still moves the centre by at most
/// `curvature` after clamping.
fn clamp_to_territory(anchor: (f64, f64), roam: f64, point: (f64, f64)) -> (f64, f64) {
    let dy = point.0 - anchor.0;
    let dx = point.1 - anchor.1;
    let dist = (dy * dy + dx * dx).sqrt();
    if dist <= roam {
        point
    } else {
        let scale = roam / dist;
        (anchor.0 + dy * scale, anchor.1 + dx * scale)
    }
}

/// Paints one tube section: bright wall ring, dark interior, instance id
/// on interior pixels. Later tubes overwrite earlier ones, which is what
/// keeps a branch child separated from its parent by a wall.
fn paint_section(gray: &mut Grid<u8>, ids: &mut Grid<u16>, ellipse: &Ellipse, wall: f64, id: u16) {
    let outer = ellipse.grown(wall);
    let (h, w) = gray.shape();
    let (r0, c0, r1, c1) = outer.bbox(h, w);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if outer.norm2(r as f64, c as f64) > 1.0 {
                continue;
            }
            if ellipse.norm2(r as f64, c as f64) <= 1.0 {
                gray.set(r, c, INTERIOR_VALUE);
                ids.set(r, c, id);
            } else {
                gray.set(r, c, WALL_VALUE);
                ids.set(r, c, 0);
            }
        }
    }
}

/// Turns interior pixels of `id` that touch pixels of `other` (8-adjacency)
/// into wall material, so binary truth never fuses the two tubes.
fn cauterize_contact(gray: &mut Grid<u8>, ids: &mut Grid<u16>, id: u16, other: u16) {
    let (h, w) = ids.shape();
    let mut contact = Vec::new();
    for (r, c, &v) in ids.indexed_iter() {
        if v != id {
            continue;
        }
        'scan: for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                    continue;
                }
                if *ids.get(rr as usize, cc as usize) == other {
                    contact.push((r, c));
                    break 'scan;
                }
            }
        }
    }
    for (r, c) in contact {
        ids.set(r, c, 0);
        gray.set(r, c, WALL_VALUE);
    }
}

/// Keeps only the connected component of `id` nearest its analytic centre;
/// stray fragments (cut off by an overlapping tube) become wall material.
fn keep_main_component(gray: &mut Grid<u8>, ids: &mut Grid<u16>, id: u16, center: (f64, f64)) {
    let mask = ids.map(|&v| v == id);
    if mask.count_true() == 0 {
        return;
    }
    let labeled = crate::regions::label_components(&mask, crate::regions::Connectivity::Eight);
    if labeled.region_count <= 1 {
        return;
    }
    // Closest labeled pixel to the analytic centre decides the keeper.
    let mut best = (f64::INFINITY, 0u32);
    for (r, c, &l) in labeled.labels.indexed_iter() {
        if l == 0 {
            continue;
        }
        let d = (r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2);
        if d < best.0 {
            best = (d, l);
        }
    }
    for (i, &l) in labeled.labels.as_slice().iter().enumerate() {
        if l != 0 && l != best.1 {
            ids.as_mut_slice()[i] = 0;
            gray.as_mut_slice()[i] = WALL_VALUE;
        }
    }
}

/// Generates the phantom volume and its ground truth.
pub fn generate(spec: &PhantomSpec) -> Result<(SliceStack, PhantomTruth)> {
    validate(spec)?;
    let (depth, height, width) = spec.extent;
    let (rmin, rmax) = spec.radius_range;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Territory geometry: a tube (or its branch child) never leaves the
    // disk of radius `roam` around its founder's start, and the painted
    // footprint never leaves `territory`.
    let roam = (3.0 * spec.curvature).max(2.0);
    let max_semi_major = rmax * (1.0 + RADIUS_JITTER) * MAX_AXIS_RATIO.sqrt();
    let territory = max_semi_major + spec.wall_thickness + roam;
    let margin = territory.ceil() + 1.0;
    let min_separation = 2.0 * territory + 2.0;

    if 2.0 * margin >= height as f64 || 2.0 * margin >= width as f64 {
        return Err(CoreError::Placement(format!(
            "extent {height}x{width} too small for tubes needing a {margin}-pixel margin"
        )));
    }

    // Rejection-sample founder anchors with pairwise separation.
    let mut anchors: Vec<(f64, f64)> = Vec::with_capacity(spec.n_tubes);
    let mut attempts = 0usize;
    while anchors.len() < spec.n_tubes {
        attempts += 1;
        if attempts > 20_000 {
            return Err(CoreError::Placement(format!(
                "could not place {} tubes with separation {min_separation:.1} in {height}x{width}",
                spec.n_tubes
            )));
        }
        let candidate = (
            rng.gen_range(margin..height as f64 - margin),
            rng.gen_range(margin..width as f64 - margin),
        );
        let clear = anchors.iter().all(|a| {
            let d = ((a.0 - candidate.0).powi(2) + (a.1 - candidate.1).powi(2)).sqrt();
            d >= min_separation
        });
        if clear {
            anchors.push(candidate);
        }
    }

    let mut tubes: Vec<TubeState> = anchors
        .into_iter()
        .enumerate()
        .map(|(i, anchor)| TubeState {
            id: (i + 1) as u16,
            anchor,
            center: anchor,
            base_radius: rng.gen_range(rmin..=rmax),
            ratio: rng.gen_range(1.02..=MAX_AXIS_RATIO - 0.05),
            orientation: rng.gen_range(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2),
            born_at: 0,
            parent: None,
            has_branched: false,
        })
        .collect();

    let mut tube_paths: BTreeMap<u16, Vec<TubeSection>> = BTreeMap::new();
    let mut parents: BTreeMap<u16, u16> = BTreeMap::new();
    let mut slices: Vec<GraySlice> = Vec::with_capacity(depth);
    let mut instance_labels: Vec<Grid<u16>> = Vec::with_capacity(depth);

    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).expect("validated sigma"))
    } else {
        None
    };

    for slice in 0..depth {
        // Drift everything alive (id order keeps the rng stream stable).
        if slice > 0 {
            for tube in tubes.iter_mut() {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let magnitude = rng.gen_range(0.0..=spec.curvature);
                let proposal = (
                    tube.center.0 + magnitude * angle.sin(),
                    tube.center.1 + magnitude * angle.cos(),
                );
                tube.center = clamp_to_territory(tube.anchor, roam, proposal);
                tube.ratio = (tube.ratio + rng.gen_range(-0.02..=0.02)).clamp(1.0, MAX_AXIS_RATIO);
                tube.orientation += rng.gen_range(-0.05..=0.05);
            }
        }

        // Branch decisions: founders only, one branch each, and only where
        // the child can record at least three sections before the stack ends.
        if spec.branch_prob > 0.0 && slice >= 2 && slice + 3 < depth {
            let next_id_base = tubes.len();
            let mut spawned = 0usize;
            for i in 0..next_id_base {
                let eligible = tubes[i].parent.is_none()
                    && !tubes[i].has_branched
                    && tubes[i].base_radius * CHILD_RADIUS_FACTOR >= rmin.min(3.0);
                if !eligible || rng.gen::<f64>() >= spec.branch_prob {
                    continue;
                }
                let parent_ellipse = section_ellipse(&tubes[i], 1.0);
                let direction = rng.gen_range(0.0..std::f64::consts::TAU);
                let mut offset = 0.15 * parent_ellipse.semi_minor;
                let child_radius = tubes[i].base_radius * CHILD_RADIUS_FACTOR;
                let child_ratio: f64 = rng.gen_range(1.02..=1.2);
                // Shrink the offset until the stamped child shares enough
                // footprint with the parent; offset zero is always enough
                // because the child covers CHILD_RADIUS_FACTOR^2 of the
                // parent's area.
                let mut center = tubes[i].center;
                for _ in 0..8 {
                    center = (
                        tubes[i].center.0 + offset * direction.sin(),
                        tubes[i].center.1 + offset * direction.cos(),
                    );
                    let child_ellipse = Ellipse {
                        center,
                        semi_major: child_radius * child_ratio.sqrt(),
                        semi_minor: child_radius / child_ratio.sqrt(),
                        orientation: tubes[i].orientation,
                    };
                    // Target a small cushion over the contract so the
                    // per-slice radius jitter cannot eat the margin.
                    if footprint_iou(&child_ellipse, &parent_ellipse, height, width)
                        >= BRANCH_MIN_IOU + 0.05
                    {
                        break;
                    }
                    offset *= 0.5;
                }
                tubes[i].has_branched = true;
                let parent_id = tubes[i].id;
                let child_id = (next_id_base + spawned + 1) as u16;
                spawned += 1;
                parents.insert(child_id, parent_id);
                tubes.push(TubeState {
                    id: child_id,
                    anchor: tubes[i].anchor,
                    center,
                    base_radius: child_radius,
                    ratio: child_ratio,
                    orientation: tubes[i].orientation,
                    born_at: slice,
                    parent: Some(parent_id),
                    has_branched: true,
                });
            }
        }

        // Fix this slice's analytic sections (radius jitter drawn once per
        // tube; the repair loop below must not consume randomness).
        let mut sections: Vec<(usize, Ellipse)> = Vec::new();
        for (i, tube) in tubes.iter().enumerate() {
            if tube.born_at > slice {
                continue;
            }
            let scale = 1.0 + rng.gen_range(-RADIUS_JITTER..=RADIUS_JITTER);
            sections.push((i, section_ellipse(tube, scale)));
        }

        // Paint, separate, repair; shrink an overgrown child and repaint if
        // it ever swallowed its parent whole (bounded, deterministic).
        let mut gray;
        let mut ids;
        let mut guard = 0;
        loop {
            gray = Grid::filled(height, width, BACKGROUND_VALUE);
            ids = Grid::filled(height, width, 0u16);
            for &(i, ref ellipse) in &sections {
                paint_section(&mut gray, &mut ids, ellipse, spec.wall_thickness, tubes[i].id);
            }
            for &(i, _) in &sections {
                if let Some(parent_id) = tubes[i].parent {
                    cauterize_contact(&mut gray, &mut ids, parent_id, tubes[i].id);
                }
            }
            for &(i, ref ellipse) in &sections {
                keep_main_component(&mut gray, &mut ids, tubes[i].id, ellipse.center);
            }

            let emptied: Vec<u16> = sections
                .iter()
                .map(|&(i, _)| tubes[i].id)
                .filter(|id| !ids.as_slice().contains(id))
                .collect();
            if emptied.is_empty() {
                break;
            }
            guard += 1;
            if guard > 8 {
                return Err(CoreError::Placement(format!(
                    "slice {slice}: tube section irrecoverably occluded"
                )));
            }
            // Only a child overwriting its parent can empty a section;
            // shrink every child sharing a territory with an emptied tube.
            for (i, ellipse) in sections.iter_mut().map(|s| (s.0, &mut s.1)) {
                if let Some(parent_id) = tubes[i].parent {
                    if emptied.contains(&parent_id) {
                        ellipse.semi_major *= 0.8;
                        ellipse.semi_minor *= 0.8;
                    }
                }
            }
        }

        for &(i, ref ellipse) in &sections {
            tube_paths.entry(tubes[i].id).or_default().push(TubeSection {
                slice,
                centroid: ellipse.center,
                radius: (ellipse.semi_major * ellipse.semi_minor).sqrt(),
                semi_major: ellipse.semi_major,
                semi_minor: ellipse.semi_minor,
                orientation: ellipse.orientation,
            });
        }

        if let Some(noise) = &noise {
            for v in gray.as_mut_slice() {
                let sample = noise.sample(&mut rng);
                *v = (f64::from(*v) + sample).round().clamp(0.0, 255.0) as u8;
            }
        }

        slices.push(GraySlice::U8(gray));
        instance_labels.push(ids);
    }

    Ok((
        SliceStack {
            slices,
            slice_spacing: 1.0,
            pixel_pitch: 1.0,
            axis_label: "growth".into(),
        },
        PhantomTruth {
            instance_labels,
            tube_paths,
            parents,
        },
    ))
}
