//! Synthetic paired faces with a known depth-to-RGB mapping.
//!
//! Depth is a head-shaped dome plus random Gaussian bumps on a `-1`
//! background. RGB is a fixed function of depth alone: a colormap of the
//! depth value times Lambertian shading from the depth gradient. Because the
//! mapping is deterministic, the ideal generator output is known exactly.

use serde::{Deserialize, Serialize};

use super::{PairedSample, Split};
use crate::error::{Error, Result};
use crate::models::{depth_shape, rgb_shape, IMAGE_SIZE};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    #[default]
    Warm,
    Cool,
}

impl Colormap {
    /// `t` in `[0, 1]` to RGB in `[0, 1]`.
    fn color(self, t: f64) -> [f64; 3] {
        match self {
            Colormap::Warm => [0.15 + 0.8 * t, 0.1 + 0.6 * t * t, 0.1 + 0.35 * (1.0 - t)],
            Colormap::Cool => [0.1 + 0.3 * t, 0.2 + 0.5 * t, 0.3 + 0.6 * t],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub blobs_min: usize,
    pub blobs_max: usize,
    pub colormap: Colormap,
    /// 0 = flat colour, 1 = fully shaded.
    pub shading: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            count: 64,
            blobs_min: 3,
            blobs_max: 6,
            colormap: Colormap::Warm,
            shading: 0.6,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("synthetic dataset needs count >= 1"));
        }
        if self.blobs_min > self.blobs_max {
            return Err(Error::config(format!(
                "blob range {}..={} is empty",
                self.blobs_min, self.blobs_max
            )));
        }
        if !(0.0..=1.0).contains(&self.shading) {
            return Err(Error::config(format!(
                "shading strength must be in [0, 1], got {}",
                self.shading
            )));
        }
        Ok(())
    }
}

/// Surface slope multiplier used for the normals; depth units are tiny
/// compared with pixel spacing.
const RELIEF: f64 = 8.0;
const LIGHT: [f64; 3] = [-0.5, -0.5, std::f64::consts::FRAC_1_SQRT_2];

/// Colour of every pixel of a `size x size` normalized depth map, as a
/// `(3, size, size)` plane set in `[-1, 1]`.
pub fn render_rgb(depth: &[f32], size: usize, colormap: Colormap, shading: f64) -> Vec<f32> {
    assert_eq!(depth.len(), size * size, "depth plane size mismatch");
    let at = |y: usize, x: usize| depth[y * size + x] as f64;
    let plane = size * size;
    let mut out = vec![0.0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(size - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(size - 1));
            let gx = (at(y, xr) - at(y, xl)) / 2.0;
            let gy = (at(yd, x) - at(yu, x)) / 2.0;
            let n = [-RELIEF * gx, -RELIEF * gy, 1.0];
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            let lambert = ((n[0] * LIGHT[0] + n[1] * LIGHT[1] + n[2] * LIGHT[2]) / norm).max(0.0);
            let shade = 1.0 - shading + shading * lambert;
            let t = ((at(y, x) + 1.0) / 2.0).clamp(0.0, 1.0);
            let rgb = colormap.color(t);
            for c in 0..3 {
                out[c * plane + y * size + x] = ((rgb[c] * shade).clamp(0.0, 1.0) * 2.0 - 1.0) as f32;
            }
        }
    }
    out
}

fn synth_depth(rng: &mut Rng, spec: &SynthSpec) -> Vec<f32> {
    let size = IMAGE_SIZE as f64;
    let cx = size / 2.0 + rng.uniform(-4.0, 4.0) as f64;
    let cy = size / 2.0 + rng.uniform(-4.0, 4.0) as f64;
    let rx = rng.uniform(15.0, 22.0) as f64;
    let ry = rng.uniform(19.0, 26.0) as f64;
    let blobs = rng.range_inclusive(spec.blobs_min, spec.blobs_max);
    let bumps: Vec<[f64; 4]> = (0..blobs)
        .map(|_| {
            [
                cx + rng.uniform(-0.6, 0.6) as f64 * rx,
                cy + rng.uniform(-0.6, 0.6) as f64 * ry,
                rng.uniform(2.0, 6.0) as f64,
                rng.uniform(-0.25, 0.35) as f64,
            ]
        })
        .collect();
    let mut depth = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (px, py) = (x as f64, y as f64);
            let e = ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2);
            if e >= 1.0 {
                depth.push(-1.0);
                continue;
            }
            let mut h = 0.6 * (1.0 - e).sqrt();
            for &[bx, by, sigma, amp] in &bumps {
                let r2 = (px - bx).powi(2) + (py - by).powi(2);
                h += amp * (-r2 / (2.0 * sigma * sigma)).exp();
            }
            depth.push((-0.8 + 1.6 * h).clamp(-0.95, 1.0) as f32);
        }
    }
    depth
}

pub fn synthesize_dataset(spec: &SynthSpec) -> Result<Vec<PairedSample>> {
    spec.validate()?;
    let mut rng = Rng::stream(spec.seed, 0);
    let mut split_rng = Rng::stream(spec.seed, 1);
    let order = split_rng.permutation(spec.count);
    let n_train = (spec.count as f64 * 0.8).round() as usize;
    let mut split = vec![Split::Test; spec.count];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    (0..spec.count)
        .map(|i| {
            let depth = synth_depth(&mut rng, spec);
            let rgb = render_rgb(&depth, IMAGE_SIZE, spec.colormap, spec.shading);
            Ok(PairedSample {
                depth: Tensor::from_vec(depth_shape(1), depth)?,
                rgb: Tensor::from_vec(rgb_shape(1), rgb)?,
                id: format!("synth_{i:05}"),
                split: split[i],
            })
        })
        .collect()
}
