use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::{normalize_depth, normalize_rgb, PairedSample, Split};
use crate::error::{Error, Result};
use crate::models::{depth_shape, rgb_shape, IMAGE_SIZE};
use crate::tensor::Tensor;

/// Millimetres; the usual working range of a face in front of a Kinect-class sensor.
pub const DEFAULT_D_MIN: f32 = 500.0;
pub const DEFAULT_D_MAX: f32 = 1500.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Defaults to the depth file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub depth: PathBuf,
    pub rgb: PathBuf,
    pub split: Split,
}

impl ManifestEntry {
    pub fn id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.depth
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }
}

/// Paths are resolved relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub d_min: f32,
    pub d_max: f32,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::data(path, format!("malformed manifest: {e}")))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate().map_err(|e| match e {
            Error::Config(msg) => Error::data(path, msg),
            other => other,
        })?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_max.is_nan() || self.d_min.is_nan() || self.d_max <= self.d_min {
            return Err(Error::config(format!(
                "depth range must satisfy d_max > d_min, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            let id = e.id();
            if !seen.insert(id.clone()) {
                return Err(Error::config(format!("duplicate sample id {id}")));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::data(path, format!("cannot decode image: {e}")))
}

/// Corner-aligned bilinear resize of a single-channel plane.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w, "plane size mismatch");
    let coord = |o: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out <= 1 || inp <= 1 {
            return (0, 0, 0.0);
        }
        let pos = o as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let i0 = (pos.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, pos - i0 as f64)
    };
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1, ty) = coord(oy, oh, h);
        for ox in 0..ow {
            let (x0, x1, tx) = coord(ox, ow, w);
            let px = |y: usize, x: usize| src[y * w + x] as f64;
            let top = lerp(px(y0, x0), px(y0, x1), tx);
            let bottom = lerp(px(y1, x0), px(y1, x1), tx);
            out.push(lerp(top, bottom, ty) as f32);
        }
    }
    out
}

/// 16-bit single-channel PNG, normalized and resized to `(1, 1, 64, 64)`.
pub fn load_depth_png(path: &Path, d_min: f32, d_max: f32) -> Result<Tensor> {
    if d_max.is_nan() || d_min.is_nan() || d_max <= d_min {
        return Err(Error::data(
            path,
            format!("non-positive depth range [{d_min}, {d_max}]"),
        ));
    }
    let img = match open(path)? {
        DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(Error::data(
                path,
                format!("expected 16-bit grayscale depth PNG, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane: Vec<f32> = img
        .as_raw()
        .iter()
        .map(|&v| normalize_depth(v as f32, d_min, d_max))
        .collect();
    let data = resize_bilinear(&plane, h, w, IMAGE_SIZE, IMAGE_SIZE);
    Tensor::from_vec(depth_shape(1), data)
}

/// 8-bit RGB PNG, normalized and resized to `(1, 3, 64, 64)`.
pub fn load_rgb_png(path: &Path) -> Result<Tensor> {
    let img = match open(path)? {
        DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(Error::data(
                path,
                format!("expected 8-bit RGB PNG, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut data = Vec::with_capacity(3 * IMAGE_SIZE * IMAGE_SIZE);
    for c in 0..3 {
        let plane: Vec<f32> = raw.iter().skip(c).step_by(3).map(|&b| normalize_rgb(b)).collect();
        data.extend(resize_bilinear(&plane, h, w, IMAGE_SIZE, IMAGE_SIZE));
    }
    Tensor::from_vec(rgb_shape(1), data)
}

pub fn load_pair(entry: &ManifestEntry, manifest: &DatasetManifest) -> Result<PairedSample> {
    let depth = load_depth_png(&manifest.resolve(&entry.depth), manifest.d_min, manifest.d_max)?;
    let rgb = load_rgb_png(&manifest.resolve(&entry.rgb))?;
    Ok(PairedSample {
        depth,
        rgb,
        id: entry.id(),
        split: entry.split,
    })
}

/// Loads every entry after checking that all referenced files exist.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<PairedSample>> {
    for e in &manifest.entries {
        for p in [&e.depth, &e.rgb] {
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(Error::data(full, "referenced file does not exist"));
            }
        }
    }
    manifest
        .entries
        .iter()
        .map(|e| load_pair(e, manifest))
        .collect()
}

/// Writes a normalized `(1, 1, h, w)` depth map as 16-bit millimetres;
/// `-1` (background / no reading) is written as 0.
pub fn save_depth_png(path: &Path, depth: &Tensor, d_min: f32, d_max: f32) -> Result<()> {
    let s = depth.shape();
    let raw: Vec<u16> = depth
        .data()
        .iter()
        .map(|&v| {
            if v <= -1.0 {
                0
            } else {
                super::denormalize_depth(v, d_min, d_max)
                    .round()
                    .clamp(1.0, u16::MAX as f32) as u16
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(s.w() as u32, s.h() as u32, raw)
            .ok_or_else(|| Error::shape("depth tensor is not a single plane"))?;
    img.save(path)
        .map_err(|e| Error::data(path, format!("cannot write PNG: {e}")))
}

/// Writes one `(3, h, w)` item of a normalized RGB tensor as an 8-bit PNG.
pub fn save_rgb_png(path: &Path, rgb: &Tensor, index: usize) -> Result<()> {
    let s = rgb.shape();
    if s.c() != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {s}")));
    }
    let item = rgb.item(index);
    let plane = s.plane();
    let mut raw = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            raw.push(super::denormalize_rgb(item[c * plane + p]));
        }
    }
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(s.w() as u32, s.h() as u32, raw)
        .ok_or_else(|| Error::shape("rgb tensor has inconsistent size"))?;
    img.save(path)
        .map_err(|e| Error::data(path, format!("cannot write PNG: {e}")))
}
