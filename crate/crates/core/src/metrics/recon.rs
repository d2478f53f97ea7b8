use serde::{Deserialize, Serialize};

use crate::data::denormalize_rgb;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const INTENSITY_MIN: f64 = 1.0;
pub const INTENSITY_MAX: f64 = 255.0;
pub const THRESHOLDS: [f64; 3] = [1.25, 2.5, 3.75];

/// Images as flat [0, 255] intensities, all of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    image_len: usize,
    values: Vec<f64>,
}

impl ImageSet {
    pub fn new(image_len: usize, values: Vec<f64>) -> Result<Self> {
        if image_len == 0 || values.is_empty() || !values.len().is_multiple_of(image_len) {
            return Err(Error::shape(format!(
                "{} values do not form whole images of {image_len}",
                values.len()
            )));
        }
        Ok(ImageSet { image_len, values })
    }

    pub fn from_u8(images: &[Vec<u8>]) -> Result<Self> {
        let image_len = images.first().map(|i| i.len()).unwrap_or(0);
        if let Some(i) = images.iter().position(|im| im.len() != image_len) {
            return Err(Error::shape(format!(
                "image {i} has {} values, expected {image_len}",
                images[i].len()
            )));
        }
        Self::new(image_len, images.iter().flatten().map(|&b| b as f64).collect())
    }

    /// De-normalizes a [-1, 1] tensor with the same rounding as written PNGs.
    pub fn from_normalized(t: &Tensor) -> Result<Self> {
        Self::new(
            t.shape().item_len(),
            t.data().iter().map(|&v| denormalize_rgb(v) as f64).collect(),
        )
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.image_len
    }

    pub fn image_len(&self) -> usize {
        self.image_len
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub l1_norm: f64,
    pub l2_norm: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse_linear: f64,
    pub rmse_log: f64,
    /// `mean d^2 - (mean d)^2` with `d = ln y - ln y*`, no 1/2 factor.
    pub rmse_scale_inv: f64,
    pub thr_1: f64,
    pub thr_2: f64,
    pub thr_3: f64,
}

impl ReconMetrics {
    pub fn fields(&self) -> [(&'static str, f64); 10] {
        [
            ("l1_norm", self.l1_norm),
            ("l2_norm", self.l2_norm),
            ("abs_rel", self.abs_rel),
            ("sq_rel", self.sq_rel),
            ("rmse_linear", self.rmse_linear),
            ("rmse_log", self.rmse_log),
            ("rmse_scale_inv", self.rmse_scale_inv),
            ("thr_1.25", self.thr_1),
            ("thr_2.5", self.thr_2),
            ("thr_3.75", self.thr_3),
        ]
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16}{:>14}\n", "metric", "value");
        for (name, v) in self.fields() {
            out.push_str(&format!("{name:<16}{v:>14.6}\n"));
        }
        out
    }
}

fn clamp(v: f64) -> f64 {
    v.clamp(INTENSITY_MIN, INTENSITY_MAX)
}

/// Error and threshold statistics of `pred` against `gt`, pixels and
/// channels pooled, after clamping both to [1, 255].
pub fn recon_metrics(pred: &ImageSet, gt: &ImageSet) -> Result<ReconMetrics> {
    if pred.image_len != gt.image_len || pred.values.len() != gt.values.len() {
        return Err(Error::shape(format!(
            "prediction set has {} images of {}, ground truth {} of {}",
            pred.count(),
            pred.image_len,
            gt.count(),
            gt.image_len
        )));
    }
    let n = pred.values.len() as f64;
    let (mut abs, mut abs_rel, mut sq, mut sq_rel) = (0.0, 0.0, 0.0, 0.0);
    let (mut log_sq, mut log_sum) = (0.0, 0.0);
    let mut within = [0usize; 3];
    let mut l2 = 0.0;
    for (p_img, g_img) in pred
        .values
        .chunks(pred.image_len)
        .zip(gt.values.chunks(gt.image_len))
    {
        let mut img_sq = 0.0;
        for (&p, &g) in p_img.iter().zip(g_img) {
            let (y, t) = (clamp(p), clamp(g));
            let diff = y - t;
            abs += diff.abs();
            abs_rel += diff.abs() / t;
            sq += diff * diff;
            sq_rel += diff * diff / t;
            img_sq += diff * diff;
            let d = y.ln() - t.ln();
            log_sq += d * d;
            log_sum += d;
            let ratio = (y / t).max(t / y);
            for (k, &thr) in THRESHOLDS.iter().enumerate() {
                if ratio < thr {
                    within[k] += 1;
                }
            }
        }
        l2 += img_sq.sqrt();
    }
    let frac = |k: usize| within[k] as f64 / n;
    Ok(ReconMetrics {
        l1_norm: abs / n,
        l2_norm: l2 / pred.count() as f64,
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse_linear: (sq / n).sqrt(),
        rmse_log: (log_sq / n).sqrt(),
        rmse_scale_inv: (log_sq / n - (log_sum / n) * (log_sum / n)).max(0.0),
        thr_1: frac(0),
        thr_2: frac(1),
        thr_3: frac(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(image_len: usize, v: &[f64]) -> ImageSet {
        ImageSet::new(image_len, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_gives_zero_errors() {
        let a = set(4, &[10.0, 20.0, 200.0, 0.0, 255.0, 3.0, 7.0, 9.0]);
        let m = recon_metrics(&a, &a).unwrap();
        for (name, v) in m.fields() {
            let want = if name.starts_with("thr") { 1.0 } else { 0.0 };
            assert_eq!(v, want, "{name}");
        }
    }

    #[test]
    fn twos_against_ones() {
        let m = recon_metrics(&set(4, &[2.0; 4]), &set(4, &[1.0; 4])).unwrap();
        assert_eq!(m.abs_rel, 1.0);
        assert_eq!(m.sq_rel, 1.0);
        assert_eq!(m.rmse_linear, 1.0);
        assert!((m.rmse_log - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(m.rmse_scale_inv.abs() < 1e-15);
        assert_eq!((m.thr_1, m.thr_2, m.thr_3), (0.0, 1.0, 1.0));
        assert_eq!(m.l1_norm, 1.0);
        assert_eq!(m.l2_norm, 2.0);
    }

    #[test]
    fn clamping_applies_before_logs() {
        let m = recon_metrics(&set(1, &[0.0]), &set(1, &[300.0])).unwrap();
        assert_eq!(m.l1_norm, 254.0);
        assert!(m.rmse_log.is_finite());
    }

    #[test]
    fn mismatched_sets_rejected() {
        assert!(recon_metrics(&set(4, &[1.0; 8]), &set(4, &[1.0; 4])).is_err());
        assert!(recon_metrics(&set(2, &[1.0; 4]), &set(4, &[1.0; 4])).is_err());
        assert!(ImageSet::new(3, vec![1.0; 4]).is_err());
        assert!(ImageSet::from_u8(&[vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn normalized_tensor_maps_to_bytes() {
        let t = Tensor::vector(vec![-1.0, 1.0, 0.0]);
        let s = ImageSet::from_normalized(&t).unwrap();
        assert_eq!(s.image_len(), 1);
        assert_eq!(s.values()[..2], [0.0, 255.0]);
    }

    #[test]
    fn report_round_trips_through_json() {
        let m = recon_metrics(&set(2, &[3.0, 90.0]), &set(2, &[5.0, 60.0])).unwrap();
        let back: ReconMetrics = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.to_table().lines().count(), 11);
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..4).prop_flat_map(|k| {
            let n = k * 12;
            (
                prop::collection::vec(0.0f64..255.0, n),
                prop::collection::vec(0.0f64..255.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_fields_are_symmetric((p, g) in pair()) {
            let (a, b) = (set(12, &p), set(12, &g));
            let ab = recon_metrics(&a, &b).unwrap();
            let ba = recon_metrics(&b, &a).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs());
            prop_assert!(close(ab.rmse_linear, ba.rmse_linear));
            prop_assert!(close(ab.l1_norm, ba.l1_norm));
            prop_assert!(close(ab.l2_norm, ba.l2_norm));
            prop_assert!(close(ab.rmse_scale_inv, ba.rmse_scale_inv));
            prop_assert_eq!((ab.thr_1, ab.thr_2, ab.thr_3), (ba.thr_1, ba.thr_2, ba.thr_3));
        }

        #[test]
        fn thresholds_nested_and_errors_nonnegative((p, g) in pair()) {
            let m = recon_metrics(&set(12, &p), &set(12, &g)).unwrap();
            prop_assert!(m.thr_1 <= m.thr_2 && m.thr_2 <= m.thr_3 && m.thr_3 <= 1.0);
            for (name, v) in m.fields() {
                prop_assert!(v >= 0.0, "{} = {}", name, v);
            }
        }

        #[test]
        fn scale_invariant_ignores_global_factor(
            g in prop::collection::vec(2.0f64..50.0, 12),
            c in 0.5f64..5.0,
        ) {
            let p: Vec<f64> = g.iter().map(|v| v * c).collect();
            let m = recon_metrics(&set(12, &p), &set(12, &g)).unwrap();
            prop_assert!(m.rmse_scale_inv < 1e-9);
        }
    }

    #[test]
    fn asymmetric_fields_differ() {
        let (a, b) = (set(2, &[10.0, 40.0]), set(2, &[20.0, 40.0]));
        let ab = recon_metrics(&a, &b).unwrap();
        let ba = recon_metrics(&b, &a).unwrap();
        assert_ne!(ab.abs_rel, ba.abs_rel);
        assert_ne!(ab.sq_rel, ba.sq_rel);
    }
}
