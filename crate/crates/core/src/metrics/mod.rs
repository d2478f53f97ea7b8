//! Reconstruction metrics over 8-bit intensities and agreement statistics for
//! externally produced attribute and landmark probe outputs.

mod attributes;
mod landmarks;
mod recon;

pub use attributes::{
    attribute_concordance, AttributeStats, AttributeTable, ConcordanceReport, MacroAverage,
};
pub use landmarks::{landmark_eval, LandmarkEntry, LandmarkReport, LandmarkSet};
pub use recon::{recon_metrics, ImageSet, ReconMetrics, INTENSITY_MAX, INTENSITY_MIN, THRESHOLDS};

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Errors listing ids present on only one side.
pub(crate) fn check_same_ids<'a>(
    what: &str,
    left: impl Iterator<Item = &'a String>,
    right: impl Iterator<Item = &'a String>,
) -> Result<()> {
    let l: BTreeSet<&String> = left.collect();
    let r: BTreeSet<&String> = right.collect();
    let only_l: Vec<&str> = l.difference(&r).map(|s| s.as_str()).collect();
    let only_r: Vec<&str> = r.difference(&l).map(|s| s.as_str()).collect();
    if only_l.is_empty() && only_r.is_empty() {
        return Ok(());
    }
    let mut msg = format!("{what}: id sets differ");
    if !only_l.is_empty() {
        msg.push_str(&format!("; missing from second set: {}", only_l.join(", ")));
    }
    if !only_r.is_empty() {
        msg.push_str(&format!("; missing from first set: {}", only_r.join(", ")));
    }
    Err(Error::IdMismatch(msg))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}
