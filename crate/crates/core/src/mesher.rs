//! Ellipse-stack lofting and Wavefront OBJ export.
//!
//! Each track section becomes an ellipse in physical space, sampled at a
//! fixed ring resolution; consecutive rings are joined point-for-point
//! into a closed triangle strip, with optional fan caps at both ends.
//! Coordinates map as x = col * pixel_pitch, y = row * pixel_pitch,
//! z = slice_index * slice_spacing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::regions::RegionProps;
use crate::Scalar;

/// One elliptical cross-section positioned in physical space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseSection<F: Scalar> {
    /// `(x, y, z)` of the section centre.
    pub center: [F; 3],
    pub semi_major: F,
    pub semi_minor: F,
    /// Major-axis angle against +x, positive towards +y, radians.
    pub orientation: F,
    /// True when a zero axis was clamped to half a pixel.
    pub degenerate: bool,
}

/// Triangle mesh with optional per-corallite face ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<F: Scalar> {
    pub vertices: Vec<[F; 3]>,
    pub triangles: Vec<[usize; 3]>,
    /// Face ranges per corallite; empty for a single lofted tube.
    pub object_groups: Vec<ObjectGroup>,
}

/// Half-open triangle index range owned by one corallite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectGroup {
    pub corallite_id: u32,
    pub start: usize,
    pub end: usize,
}

/// Turn measured region properties into a physical ellipse section.
///
/// Semi-axes are half the measured axis lengths scaled by `pixel_pitch`.
/// A degenerate axis (a one-pixel line has minor axis 0) is clamped to
/// half a pixel so the section keeps positive area, and flagged.
pub fn section_from_props<F: Scalar>(
    props: &RegionProps<F>,
    slice_index: usize,
    pixel_pitch: F,
    slice_spacing: F,
) -> EllipseSection<F> {
    let half = F::from_f64(0.5).unwrap();
    let floor = half * pixel_pitch;
    let mut semi_major = half * props.major_axis_len * pixel_pitch;
    let mut semi_minor = half * props.minor_axis_len * pixel_pitch;
    let degenerate = semi_minor <= F::zero() || semi_major <= F::zero();
    if degenerate {
        semi_minor = semi_minor.max(floor);
        semi_major = semi_major.max(semi_minor);
    }
    EllipseSection {
        center: [
            props.centroid.1 * pixel_pitch,
            props.centroid.0 * pixel_pitch,
            F::from_count(slice_index) * slice_spacing,
        ],
        semi_major,
        semi_minor,
        orientation: props.orientation,
        degenerate,
    }
}

/// Boundary of a section sampled at `m` parameter angles.
fn ring_points<F: Scalar>(section: &EllipseSection<F>, m: usize) -> Vec<[F; 3]> {
    let tau = F::from_f64(std::f64::consts::TAU).unwrap();
    let (sin_phi, cos_phi) = section.orientation.sin_cos();
    let [cx, cy, cz] = section.center;
    (0..m)
        .map(|j| {
            let theta = tau * F::from_count(j) / F::from_count(m);
            let (sin_t, cos_t) = theta.sin_cos();
            let u = section.semi_major * cos_t;
            let v = section.semi_minor * sin_t;
            [
                cx + u * cos_phi - v * sin_phi,
                cy + u * sin_phi + v * cos_phi,
                cz,
            ]
        })
        .collect()
}

/// Loft ordered sections into a closed tube, fan caps at both ends.
pub fn loft_track<F: Scalar>(sections: &[EllipseSection<F>], m: usize) -> Result<Mesh<F>> {
    loft(sections, m, true)
}

/// Loft without end caps; the first and last rings stay open.
pub fn loft_track_uncapped<F: Scalar>(
    sections: &[EllipseSection<F>],
    m: usize,
) -> Result<Mesh<F>> {
    loft(sections, m, false)
}

fn loft<F: Scalar>(sections: &[EllipseSection<F>], m: usize, caps: bool) -> Result<Mesh<F>> {
    if sections.len() < 2 {
        return Err(CoreError::TooFewSections {
            got: sections.len(),
        });
    }
    if m < 3 {
        return Err(CoreError::InvalidParam(format!(
            "ring resolution must be at least 3, got {m}"
        )));
    }
    let n = sections.len();
    let mut vertices: Vec<[F; 3]> = Vec::with_capacity(n * m + 2);
    for section in sections {
        vertices.extend(ring_points(section, m));
    }
    // Ring s occupies vertex indices s*m .. (s+1)*m; winding below keeps
    // body normals outward and cap normals along -z / +z.
    let mut triangles: Vec<[usize; 3]> = Vec::with_capacity(2 * m * (n - 1) + 2 * m);
    for s in 0..n - 1 {
        let r0 = s * m;
        let r1 = (s + 1) * m;
        for j in 0..m {
            let jn = (j + 1) % m;
            triangles.push([r0 + j, r0 + jn, r1 + j]);
            triangles.push([r0 + jn, r1 + jn, r1 + j]);
        }
    }
    if caps {
        let bottom = vertices.len();
        vertices.push(sections[0].center);
        let top = vertices.len();
        vertices.push(sections[n - 1].center);
        let last = (n - 1) * m;
        for j in 0..m {
            triangles.push([bottom, (j + 1) % m, j]);
        }
        for j in 0..m {
            triangles.push([top, last + j, last + (j + 1) % m]);
        }
    }
    Ok(Mesh {
        vertices,
        triangles,
        object_groups: Vec::new(),
    })
}

/// Concatenate per-corallite meshes into one, recording face ranges.
pub fn merge_meshes<F: Scalar>(meshes: &[(u32, Mesh<F>)]) -> Mesh<F> {
    let mut out = Mesh {
        vertices: Vec::new(),
        triangles: Vec::new(),
        object_groups: Vec::with_capacity(meshes.len()),
    };
    for (id, mesh) in meshes {
        let v0 = out.vertices.len();
        let t0 = out.triangles.len();
        out.vertices.extend_from_slice(&mesh.vertices);
        out.triangles
            .extend(mesh.triangles.iter().map(|t| t.map(|i| i + v0)));
        out.object_groups.push(ObjectGroup {
            corallite_id: *id,
            start: t0,
            end: out.triangles.len(),
        });
    }
    out
}

/// Write one OBJ group per corallite into `w`.
///
/// Vertices use fixed 6-decimal formatting and faces 1-based global
/// indices, so identical input yields byte-identical output.
pub fn write_obj<F: Scalar, W: Write>(meshes: &[(u32, Mesh<F>)], w: &mut W) -> std::io::Result<()> {
    let mut offset = 0usize;
    for (id, mesh) in meshes {
        writeln!(w, "g corallite_{id}")?;
        for v in &mesh.vertices {
            writeln!(w, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2])?;
        }
        for t in &mesh.triangles {
            writeln!(w, "f {} {} {}", t[0] + offset + 1, t[1] + offset + 1, t[2] + offset + 1)?;
        }
        offset += mesh.vertices.len();
    }
    Ok(())
}

/// Write the colony OBJ to `path`; see [`write_obj`].
pub fn export_obj<F: Scalar>(meshes: &[(u32, Mesh<F>)], path: &Path) -> Result<()> {
    let io_err = |source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_obj(meshes, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn props(
        centroid: (f64, f64),
        major: f64,
        minor: f64,
        orientation: f64,
    ) -> RegionProps<f64> {
        RegionProps {
            label: 1,
            area: 1,
            centroid,
            major_axis_len: major,
            minor_axis_len: minor,
            orientation,
            bbox: (0, 0, 0, 0),
            pixels: Vec::new(),
        }
    }

    fn circle(cx: f64, cy: f64, z: f64, r: f64) -> EllipseSection<f64> {
        EllipseSection {
            center: [cx, cy, z],
            semi_major: r,
            semi_minor: r,
            orientation: 0.0,
            degenerate: false,
        }
    }

    #[test]
    fn section_maps_row_col_to_y_x() {
        let s = section_from_props(&props((20.0, 30.0), 10.0, 6.0, 0.25), 4, 1.0, 1.0);
        assert_eq!(s.center, [30.0, 20.0, 4.0]);
        assert_eq!(s.semi_major, 5.0);
        assert_eq!(s.semi_minor, 3.0);
        assert_eq!(s.orientation, 0.25);
        assert!(!s.degenerate);
    }

    #[test]
    fn section_applies_pitch_and_spacing() {
        let s = section_from_props(&props((0.0, 0.0), 8.0, 4.0, 0.0), 10, 0.5, 2.0);
        assert_eq!(s.center, [0.0, 0.0, 20.0]);
        assert_eq!(s.semi_major, 2.0);
        assert_eq!(s.semi_minor, 1.0);
    }

    #[test]
    fn degenerate_axes_clamp_to_half_pixel() {
        // A single pixel measures 0 along both axes.
        let s = section_from_props(&props((3.0, 3.0), 0.0, 0.0, 0.0), 0, 1.0, 1.0);
        assert!(s.degenerate);
        assert_eq!(s.semi_major, 0.5);
        assert_eq!(s.semi_minor, 0.5);

        // A 1-px-wide line keeps its major axis.
        let s = section_from_props(&props((3.0, 3.0), 6.0, 0.0, 0.0), 0, 1.0, 1.0);
        assert!(s.degenerate);
        assert_eq!(s.semi_major, 3.0);
        assert_eq!(s.semi_minor, 0.5);
    }

    #[test]
    fn two_section_loft_counts() {
        let sections = [circle(0.0, 0.0, 0.0, 2.0), circle(0.0, 0.0, 1.0, 2.0)];
        let mesh = loft_track(&sections, 16).unwrap();
        assert_eq!(mesh.vertices.len(), 34);
        assert_eq!(mesh.triangles.len(), 64);

        let open = loft_track_uncapped(&sections, 16).unwrap();
        assert_eq!(open.vertices.len(), 32);
        assert_eq!(open.triangles.len(), 32);
    }

    #[test]
    fn loft_rejects_bad_inputs() {
        let one = [circle(0.0, 0.0, 0.0, 2.0)];
        assert!(matches!(
            loft_track(&one, 16),
            Err(CoreError::TooFewSections { got: 1 })
        ));
        let two = [circle(0.0, 0.0, 0.0, 2.0), circle(0.0, 0.0, 1.0, 2.0)];
        assert!(matches!(
            loft_track(&two, 2),
            Err(CoreError::InvalidParam(_))
        ));
    }

    fn edge_counts(mesh: &Mesh<f64>) -> BTreeMap<(usize, usize), usize> {
        let mut counts = BTreeMap::new();
        for t in &mesh.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    #[test]
    fn capped_tube_is_watertight() {
        let sections = [
            circle(1.0, 2.0, 0.0, 5.0),
            circle(1.0, 2.0, 1.0, 5.0),
            circle(1.0, 2.0, 2.0, 5.0),
        ];
        let mesh = loft_track(&sections, 8).unwrap();
        for (edge, count) in edge_counts(&mesh) {
            assert_eq!(count, 2, "edge {edge:?} not shared by exactly 2 triangles");
        }
    }

    #[test]
    fn uncapped_tube_has_only_ring_boundary_edges() {
        let m = 8;
        let sections = [
            circle(0.0, 0.0, 0.0, 5.0),
            circle(0.0, 0.0, 1.0, 5.0),
            circle(0.0, 0.0, 2.0, 5.0),
        ];
        let mesh = loft_track_uncapped(&sections, m).unwrap();
        let last = 2 * m;
        for ((a, b), count) in edge_counts(&mesh) {
            let boundary = (a < m && b < m) || (a >= last && b >= last);
            assert_eq!(count, if boundary { 1 } else { 2 });
        }
    }

    fn tri_normal(mesh: &Mesh<f64>, t: [usize; 3]) -> [f64; 3] {
        let [a, b, c] = t.map(|i| mesh.vertices[i]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    }

    #[test]
    fn straight_tube_normals_point_outward() {
        let m = 12;
        let sections = [circle(0.0, 0.0, 0.0, 4.0), circle(0.0, 0.0, 3.0, 4.0)];
        let mesh = loft_track(&sections, m).unwrap();
        let body = 2 * m;
        for (k, &t) in mesh.triangles.iter().enumerate() {
            let n = tri_normal(&mesh, t);
            if k < body {
                let centroid = t
                    .iter()
                    .fold([0.0; 3], |acc, &i| {
                        let v = mesh.vertices[i];
                        [acc[0] + v[0] / 3.0, acc[1] + v[1] / 3.0, acc[2] + v[2] / 3.0]
                    });
                assert!(n[0] * centroid[0] + n[1] * centroid[1] > 0.0);
            } else if k < body + m {
                assert!(n[2] < 0.0, "bottom cap must face -z");
            } else {
                assert!(n[2] > 0.0, "top cap must face +z");
            }
        }
    }

    #[test]
    fn lateral_area_approaches_cylinder() {
        let (r, h) = (10.0, 3.0);
        let sections = [circle(0.0, 0.0, 0.0, r), circle(0.0, 0.0, h, r)];
        let mesh = loft_track_uncapped(&sections, 64).unwrap();
        let area: f64 = mesh
            .triangles
            .iter()
            .map(|&t| {
                let n = tri_normal(&mesh, t);
                0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
            })
            .sum();
        let analytic = std::f64::consts::TAU * r * h;
        assert!(area < analytic, "inscribed strip cannot exceed the cylinder");
        assert!((analytic - area) / analytic < 0.02);
    }

    #[test]
    fn pitch_scales_x_y_exactly() {
        // Power-of-two scale commutes with rounding, so the comparison
        // is exact, not approximate.
        let p = props((12.5, 7.25), 9.0, 5.0, 0.6);
        let base = loft_track(
            &[
                section_from_props(&p, 0, 1.0, 2.0),
                section_from_props(&p, 1, 1.0, 2.0),
            ],
            16,
        )
        .unwrap();
        let scaled = loft_track(
            &[
                section_from_props(&p, 0, 2.0, 2.0),
                section_from_props(&p, 1, 2.0, 2.0),
            ],
            16,
        )
        .unwrap();
        for (a, b) in base.vertices.iter().zip(&scaled.vertices) {
            assert_eq!(b[0], 2.0 * a[0]);
            assert_eq!(b[1], 2.0 * a[1]);
            assert_eq!(b[2], a[2]);
        }
    }

    #[test]
    fn merge_records_disjoint_groups() {
        let tube = |z: f64| {
            loft_track(&[circle(0.0, 0.0, z, 2.0), circle(0.0, 0.0, z + 1.0, 2.0)], 4).unwrap()
        };
        let merged = merge_meshes(&[(3, tube(0.0)), (9, tube(5.0)), (12, tube(10.0))]);
        assert_eq!(merged.object_groups.len(), 3);
        assert_eq!(merged.vertices.len(), 30);
        assert_eq!(merged.triangles.len(), 48);
        let ids: Vec<u32> = merged.object_groups.iter().map(|g| g.corallite_id).collect();
        assert_eq!(ids, vec![3, 9, 12]);
        let mut cursor = 0;
        for g in &merged.object_groups {
            assert_eq!(g.start, cursor);
            cursor = g.end;
        }
        assert_eq!(cursor, merged.triangles.len());
        for t in &merged.triangles {
            assert!(t.iter().all(|&i| i < merged.vertices.len()));
        }
    }

    #[test]
    fn obj_export_is_parseable_and_grouped() {
        let sections = [circle(1.0, 2.0, 0.0, 2.0), circle(1.0, 2.0, 1.0, 2.0)];
        let mesh = loft_track(&sections, 16).unwrap();
        let mut buf = Vec::new();
        write_obj(&[(7u32, mesh)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let mut verts = 0usize;
        let mut faces = 0usize;
        let mut groups = Vec::new();
        for line in text.lines() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    verts += 1;
                    assert_eq!(parts.clone().count(), 3);
                    assert!(parts.all(|p| p.parse::<f64>().is_ok()));
                }
                Some("f") => {
                    faces += 1;
                    let idx: Vec<usize> =
                        parts.map(|p| p.parse::<usize>().unwrap()).collect();
                    assert_eq!(idx.len(), 3);
                    assert!(idx.iter().all(|&i| (1..=34).contains(&i)));
                }
                Some("g") => groups.push(parts.next().unwrap().to_string()),
                Some(other) => panic!("unexpected OBJ directive {other}"),
                None => {}
            }
        }
        assert_eq!(verts, 34);
        assert_eq!(faces, 64);
        assert_eq!(groups, vec!["corallite_7"]);

        let empty: Vec<(u32, Mesh<f64>)> = Vec::new();
        let mut buf = Vec::new();
        write_obj(&empty, &mut buf).unwrap();
        assert!(buf.is_empty());
    }
}
