use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_same_ids, fmt_opt};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkEntry {
    pub detected: bool,
    /// Pixel coordinates; empty when not detected.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkSet {
    pub entries: BTreeMap<String, LandmarkEntry>,
}

impl LandmarkSet {
    /// Reads `id,detected,x1,y1,...,xP,yP`. Rows may be ragged; trailing
    /// empty cells are ignored.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| Error::data(path, format!("cannot read landmark file: {e}")))?;
        let mut entries = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::data(path, e.to_string()))?;
            if rec.len() < 2 {
                return Err(Error::data(path, "rows need at least `id,detected`"));
            }
            let id = rec[0].trim().to_string();
            let bad = |m: &str| Error::data(path, format!("`{id}`: {m}"));
            let detected = match rec[1].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(bad(&format!("detected flag `{other}` is not 0/1"))),
            };
            let coords = rec
                .iter()
                .skip(2)
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(|c| c.parse::<f64>().map_err(|_| bad(&format!("bad coordinate `{c}`"))))
                .collect::<Result<Vec<f64>>>()?;
            if coords.len() % 2 != 0 {
                return Err(bad("odd number of coordinates"));
            }
            let points = coords.chunks(2).map(|c| (c[0], c[1])).collect();
            if entries.insert(id.clone(), LandmarkEntry { detected, points }).is_some() {
                return Err(Error::data(path, format!("duplicate id `{id}`")));
            }
        }
        Ok(LandmarkSet { entries })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkReport {
    pub images: usize,
    pub reference_detected: usize,
    pub both_detected: usize,
    /// Fraction of reference detections the prediction also detects.
    pub detection_accuracy: Option<f64>,
    /// Mean over jointly detected images of the mean point distance.
    pub mean_l2: Option<f64>,
}

impl LandmarkReport {
    pub fn to_table(&self) -> String {
        format!(
            "{:<22}{:>12}\n{:<22}{:>12}\n{:<22}{:>12}\n{:<22}{:>12}\n{:<22}{:>12}\n",
            "images",
            self.images,
            "reference detected",
            self.reference_detected,
            "both detected",
            self.both_detected,
            "detection accuracy",
            fmt_opt(self.detection_accuracy),
            "mean l2",
            fmt_opt(self.mean_l2),
        )
    }
}

pub fn landmark_eval(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<LandmarkReport> {
    check_same_ids("landmark sets", pred.entries.keys(), gt.entries.keys())?;
    let (mut reference, mut both, mut l2_sum) = (0usize, 0usize, 0.0f64);
    for (id, g) in &gt.entries {
        let p = &pred.entries[id];
        if !g.detected {
            continue;
        }
        reference += 1;
        if !p.detected {
            continue;
        }
        if p.points.len() != g.points.len() || g.points.is_empty() {
            return Err(Error::shape(format!(
                "`{id}`: {} predicted points vs {} reference points",
                p.points.len(),
                g.points.len()
            )));
        }
        both += 1;
        let sum: f64 = p
            .points
            .iter()
            .zip(&g.points)
            .map(|(a, b)| (a.0 - b.0).hypot(a.1 - b.1))
            .sum();
        l2_sum += sum / g.points.len() as f64;
    }
    Ok(LandmarkReport {
        images: gt.entries.len(),
        reference_detected: reference,
        both_detected: both,
        detection_accuracy: (reference > 0).then(|| both as f64 / reference as f64),
        mean_l2: (both > 0).then(|| l2_sum / both as f64),
    })
}
