//! Paired depth/RGB samples: normalization, file loading, binary-map
//! ablation input, a synthetic paired dataset and seeded batching.

mod batch;
mod io;
mod synth;

pub use batch::{batches, Batch, Batcher};
pub use io::{
    load_dataset, load_depth_png, load_pair, load_rgb_png, resize_bilinear, save_depth_png,
    save_rgb_png, DatasetManifest, ManifestEntry, DEFAULT_D_MAX, DEFAULT_D_MIN,
};
pub use synth::{render_rgb, synthesize_dataset, Colormap, SynthSpec};

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One aligned depth/RGB pair, both normalized to `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct PairedSample {
    /// `(1, 1, 64, 64)`
    pub depth: Tensor,
    /// `(1, 3, 64, 64)`
    pub rgb: Tensor,
    pub id: String,
    pub split: Split,
}

/// Which representation of the depth map is fed to the generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    #[default]
    Depth,
    Binary,
}

pub const DEFAULT_BINARY_THRESHOLD: f32 = 0.0;

/// Foreground mask: values above `threshold` become `+1`, the rest `-1`.
pub fn binarize_depth(depth: &Tensor, threshold: f32) -> Tensor {
    depth.map(|v| if v > threshold { 1.0 } else { -1.0 })
}

/// Linear map of a sensor depth to `[-1, 1]`, clamped; zero (no reading)
/// maps to `-1`.
pub fn normalize_depth(raw: f32, d_min: f32, d_max: f32) -> f32 {
    if raw == 0.0 {
        return -1.0;
    }
    let v = 2.0 * (raw as f64 - d_min as f64) / (d_max as f64 - d_min as f64) - 1.0;
    v.clamp(-1.0, 1.0) as f32
}

pub fn denormalize_depth(v: f32, d_min: f32, d_max: f32) -> f32 {
    (d_min as f64 + (v as f64 + 1.0) / 2.0 * (d_max as f64 - d_min as f64)) as f32
}

pub fn normalize_rgb(byte: u8) -> f32 {
    (byte as f64 / 255.0 * 2.0 - 1.0) as f32
}

/// `[-1, 1] -> [0, 255]`, rounded half away from zero and clamped.
pub fn denormalize_rgb(v: f32) -> u8 {
    let x = ((v as f64 + 1.0) / 2.0 * 255.0).round();
    x.clamp(0.0, 255.0) as u8
}
