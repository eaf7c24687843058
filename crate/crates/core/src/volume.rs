//! Slice-stack, annotation-mask and manifest I/O.
//!
//! Scans arrive as ordered per-slice image files (PNG or TIFF, 8- or 16-bit
//! single-channel). Annotation masks are 8-bit binary PNGs holding 0 and
//! 255. A JSON manifest ties a stack together; every path inside it is
//! interpreted relative to the manifest's own directory so datasets stay
//! relocatable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::Grid;

/// One grayscale slice, kept at its native bit depth.
///
/// 16-bit scans are preserved as read; nothing in the pipeline compresses
/// them to 8 bits behind the caller's back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraySlice {
    U8(Grid<u8>),
    U16(Grid<u16>),
}

impl GraySlice {
    pub fn height(&self) -> usize {
        match self {
            GraySlice::U8(g) => g.height(),
            GraySlice::U16(g) => g.height(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            GraySlice::U8(g) => g.width(),
            GraySlice::U16(g) => g.width(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// Largest representable intensity for this bit depth.
    pub fn max_value(&self) -> f64 {
        match self {
            GraySlice::U8(_) => f64::from(u8::MAX),
            GraySlice::U16(_) => f64::from(u16::MAX),
        }
    }

    /// Intensity at `(row, col)` in native units.
    pub fn value(&self, row: usize, col: usize) -> f64 {
        match self {
            GraySlice::U8(g) => f64::from(*g.get(row, col)),
            GraySlice::U16(g) => f64::from(*g.get(row, col)),
        }
    }

    /// Native-unit floating-point copy of the raster.
    pub fn to_f64(&self) -> Grid<f64> {
        match self {
            GraySlice::U8(g) => g.map(|v| f64::from(*v)),
            GraySlice::U16(g) => g.map(|v| f64::from(*v)),
        }
    }
}

/// Ordered stack of equally shaped slices plus physical metadata.
#[derive(Debug, Clone)]
pub struct SliceStack {
    pub slices: Vec<GraySlice>,
    /// Distance between consecutive slices, in the same unit as `pixel_pitch`.
    pub slice_spacing: f64,
    /// In-plane size of one pixel.
    pub pixel_pitch: f64,
    /// Anatomical meaning of the stacking axis, e.g. `"growth"`.
    pub axis_label: String,
}

impl SliceStack {
    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn height(&self) -> usize {
        self.slices.first().map_or(0, GraySlice::height)
    }

    pub fn width(&self) -> usize {
        self.slices.first().map_or(0, GraySlice::width)
    }
}

/// Binary annotation or prediction mask for one slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSlice {
    pub raster: Grid<bool>,
    pub slice_index: usize,
}

impl MaskSlice {
    pub fn new(raster: Grid<bool>, slice_index: usize) -> Self {
        Self {
            raster,
            slice_index,
        }
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }
}

/// How complete an annotation mask is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationKind {
    /// Every corallite on the slice is painted.
    #[serde(rename = "full")]
    Full,
    /// Only marked points/regions are painted; absence proves nothing.
    #[serde(rename = "partial-points")]
    PartialPoints,
}

/// One annotated slice inside a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub path: String,
    pub kind: AnnotationKind,
}

fn default_axis_label() -> String {
    "growth".to_owned()
}

/// Dataset manifest: slice ordering, annotations and physical metadata.
///
/// All `path` fields are relative to the directory containing the manifest
/// file. `slice_spacing` and `pixel_pitch` default to 1.0 when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub specimen_id: String,
    #[serde(default = "default_axis_label")]
    pub axis_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_pitch: Option<f64>,
    pub slice_files: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotation_files: BTreeMap<usize, Annotation>,
    /// Directory the manifest was loaded from; set by [`Manifest::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    /// Reads and validates a manifest JSON file.
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|source| CoreError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CoreError::Manifest {
                path: path.to_owned(),
                msg: e.to_string(),
            })?;
        if manifest.slice_files.is_empty() {
            return Err(CoreError::Manifest {
                path: path.to_owned(),
                msg: "slice_files is empty".into(),
            });
        }
        for &index in manifest.annotation_files.keys() {
            if index >= manifest.slice_files.len() {
                return Err(CoreError::Manifest {
                    path: path.to_owned(),
                    msg: format!(
                        "annotation references slice {index}, stack has {}",
                        manifest.slice_files.len()
                    ),
                });
            }
        }
        manifest.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_owned();
        Ok(manifest)
    }

    /// Serialises the manifest next to its data files.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(path, text).map_err(|source| CoreError::Io {
            path: path.to_owned(),
            source,
        })
    }

    /// Resolves a manifest-relative path.
    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    /// Slice spacing with the 1.0 default applied.
    pub fn slice_spacing_or_default(&self) -> f64 {
        self.slice_spacing.unwrap_or(1.0)
    }

    /// Pixel pitch with the 1.0 default applied.
    pub fn pixel_pitch_or_default(&self) -> f64 {
        self.pixel_pitch.unwrap_or(1.0)
    }
}

/// Loads one grayscale slice image (PNG or TIFF, 8- or 16-bit).
///
/// Multi-channel inputs are rejected: silently collapsing colour to
/// luminance would change downstream intensities.
pub fn load_gray(path: &Path) -> Result<GraySlice> {
    let img = image::open(path).map_err(|source| CoreError::Decode {
        path: path.to_owned(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => Ok(GraySlice::U8(Grid::from_vec(h, w, buf.into_raw()))),
        DynamicImage::ImageLuma16(buf) => Ok(GraySlice::U16(Grid::from_vec(h, w, buf.into_raw()))),
        other => Err(CoreError::NotGrayscale {
            path: path.to_owned(),
            found: format!("{:?}", other.color()),
        }),
    }
}

/// Writes one grayscale slice as PNG, preserving bit depth.
pub fn save_gray(slice: &GraySlice, path: &Path) -> Result<()> {
    let encode = |img: DynamicImage| {
        img.save_with_format(path, ImageFormat::Png)
            .map_err(|source| CoreError::Encode {
                path: path.to_owned(),
                source,
            })
    };
    match slice {
        GraySlice::U8(g) => {
            let buf = image::GrayImage::from_raw(
                g.width() as u32,
                g.height() as u32,
                g.as_slice().to_vec(),
            )
            .expect("buffer matches dimensions");
            encode(DynamicImage::ImageLuma8(buf))
        }
        GraySlice::U16(g) => {
            let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
                g.width() as u32,
                g.height() as u32,
                g.as_slice().to_vec(),
            )
            .expect("buffer matches dimensions");
            encode(DynamicImage::ImageLuma16(buf))
        }
    }
}

/// Loads every slice named by the manifest, in manifest order.
pub fn load_stack(manifest: &Manifest) -> Result<SliceStack> {
    let mut slices = Vec::with_capacity(manifest.slice_files.len());
    let mut shape: Option<(usize, usize)> = None;
    for (index, rel) in manifest.slice_files.iter().enumerate() {
        let slice = load_gray(&manifest.resolve(rel))?;
        match shape {
            None => shape = Some(slice.shape()),
            Some((h, w)) => {
                if slice.shape() != (h, w) {
                    return Err(CoreError::DimensionMismatch {
                        index,
                        found_h: slice.height(),
                        found_w: slice.width(),
                        want_h: h,
                        want_w: w,
                    });
                }
            }
        }
        slices.push(slice);
    }
    Ok(SliceStack {
        slices,
        slice_spacing: manifest.slice_spacing_or_default(),
        pixel_pitch: manifest.pixel_pitch_or_default(),
        axis_label: manifest.axis_label.clone(),
    })
}

/// Loads a binary mask.
///
/// Only 8-bit single-channel PNGs are accepted; values >= 128 count as
/// foreground so masks produced with anti-aliased tooling still load.
pub fn load_mask(path: &Path, slice_index: usize) -> Result<MaskSlice> {
    let img = image::open(path).map_err(|source| CoreError::Decode {
        path: path.to_owned(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let raster = Grid::from_vec(h, w, buf.into_raw()).map(|v| *v >= 128);
            Ok(MaskSlice::new(raster, slice_index))
        }
        other => Err(CoreError::MaskNotEightBit {
            path: path.to_owned(),
            found: format!("{:?}", other.color()),
        }),
    }
}

/// Writes a binary mask as an 8-bit PNG holding exactly 0 and 255.
pub fn save_mask(mask: &MaskSlice, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask
        .raster
        .as_slice()
        .iter()
        .map(|&v| if v { 255 } else { 0 })
        .collect();
    let buf = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|source| CoreError::Encode {
            path: path.to_owned(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    #[test]
    fn mask_round_trip_is_exact() {
        let dir = tmp();
        let path = dir.path().join("mask.png");
        let mut raster = Grid::filled(5, 7, false);
        raster.set(0, 0, true);
        raster.set(4, 6, true);
        raster.set(2, 3, true);
        let mask = MaskSlice::new(raster, 3);
        save_mask(&mask, &path).unwrap();
        let back = load_mask(&path, 3).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn mask_load_thresholds_at_128() {
        let dir = tmp();
        let path = dir.path().join("gray_mask.png");
        let buf = image::GrayImage::from_raw(1, 4, vec![0, 127, 128, 200]).unwrap();
        buf.save_with_format(&path, ImageFormat::Png).unwrap();
        let mask = load_mask(&path, 0).unwrap();
        assert_eq!(mask.raster.as_slice(), &[false, false, true, true]);
    }

    #[test]
    fn sixteen_bit_mask_is_rejected() {
        let dir = tmp();
        let path = dir.path().join("mask16.png");
        save_gray(&GraySlice::U16(Grid::filled(2, 2, 65535u16)), &path).unwrap();
        let err = load_mask(&path, 0).unwrap_err();
        assert!(matches!(err, CoreError::MaskNotEightBit { .. }));
    }

    #[test]
    fn sixteen_bit_slice_survives_round_trip() {
        let dir = tmp();
        let path = dir.path().join("slice16.png");
        let mut grid = Grid::filled(3, 3, 0u16);
        grid.set(1, 1, 40_000);
        grid.set(2, 2, 65_535);
        save_gray(&GraySlice::U16(grid.clone()), &path).unwrap();
        match load_gray(&path).unwrap() {
            GraySlice::U16(back) => assert_eq!(back, grid),
            GraySlice::U8(_) => panic!("bit depth was compressed"),
        }
    }

    #[test]
    fn rgb_slice_is_rejected() {
        let dir = tmp();
        let path = dir.path().join("rgb.png");
        let buf = image::RgbImage::from_raw(2, 2, vec![0u8; 12]).unwrap();
        buf.save_with_format(&path, ImageFormat::Png).unwrap();
        assert!(matches!(
            load_gray(&path).unwrap_err(),
            CoreError::NotGrayscale { .. }
        ));
    }

    #[test]
    fn stack_load_preserves_order_and_checks_shape() {
        let dir = tmp();
        for (i, value) in [10u8, 20, 30].iter().enumerate() {
            let slice = GraySlice::U8(Grid::filled(4, 4, *value));
            save_gray(&slice, &dir.path().join(format!("s{i}.png"))).unwrap();
        }
        let manifest = Manifest {
            specimen_id: "t".into(),
            axis_label: "growth".into(),
            slice_spacing: Some(2.0),
            pixel_pitch: None,
            slice_files: vec!["s0.png".into(), "s1.png".into(), "s2.png".into()],
            annotation_files: BTreeMap::new(),
            base_dir: dir.path().to_owned(),
        };
        let stack = load_stack(&manifest).unwrap();
        assert_eq!(stack.depth(), 3);
        assert_eq!(stack.slice_spacing, 2.0);
        assert_eq!(stack.pixel_pitch, 1.0);
        let values: Vec<f64> = stack.slices.iter().map(|s| s.value(0, 0)).collect();
        assert_eq!(values, vec![10.0, 20.0, 30.0]);

        // A mismatched slice shape is an error, not a silent crop.
        save_gray(
            &GraySlice::U8(Grid::filled(2, 4, 0)),
            &dir.path().join("s1.png"),
        )
        .unwrap();
        assert!(matches!(
            load_stack(&manifest).unwrap_err(),
            CoreError::DimensionMismatch { index: 1, .. }
        ));
    }

    #[test]
    fn manifest_round_trip_and_relative_paths() {
        let dir = tmp();
        let sub = dir.path().join("data");
        fs::create_dir(&sub).unwrap();
        let mut annotation_files = BTreeMap::new();
        annotation_files.insert(
            1,
            Annotation {
                path: "masks/m1.png".into(),
                kind: AnnotationKind::Full,
            },
        );
        let manifest = Manifest {
            specimen_id: "spec-7".into(),
            axis_label: "growth".into(),
            slice_spacing: None,
            pixel_pitch: Some(0.025),
            slice_files: vec!["slices/a.png".into(), "slices/b.png".into()],
            annotation_files,
            base_dir: PathBuf::new(),
        };
        let path = sub.join("manifest.json");
        manifest.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.specimen_id, "spec-7");
        assert_eq!(back.base_dir, sub);
        assert_eq!(back.resolve("slices/a.png"), sub.join("slices/a.png"));
        assert_eq!(back.annotation_files[&1].kind, AnnotationKind::Full);
        assert_eq!(back.slice_spacing_or_default(), 1.0);
        assert_eq!(back.pixel_pitch_or_default(), 0.025);
    }

    #[test]
    fn manifest_rejects_out_of_range_annotation() {
        let dir = tmp();
        let path = dir.path().join("manifest.json");
        fs::write(
            &path,
            r#"{
                "specimen_id": "x",
                "slice_files": ["a.png"],
                "annotation_files": {"3": {"path": "m.png", "kind": "full"}}
            }"#,
        )
        .unwrap();
        assert!(matches!(
            Manifest::load(&path).unwrap_err(),
            CoreError::Manifest { .. }
        ));
    }
}
