use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_same_ids, fmt_opt};
use crate::error::{Error, Result};

/// Binary probe predictions, one row of attribute flags per image id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttributeTable {
    pub names: Vec<String>,
    pub rows: BTreeMap<String, Vec<bool>>,
}

fn parse_flag(cell: &str) -> Option<bool> {
    match cell.trim() {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

impl AttributeTable {
    /// Reads `id,attr1,...,attrK` with 0/1 cells.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::data(path, format!("cannot read attribute table: {e}")))?;
        let header = reader
            .headers()
            .map_err(|e| Error::data(path, e.to_string()))?
            .clone();
        if header.len() < 2 || header.get(0).map(str::trim) != Some("id") {
            return Err(Error::data(path, "header must be `id,attr1,...`"));
        }
        let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut rows = BTreeMap::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::data(path, e.to_string()))?;
            let id = rec[0].trim().to_string();
            let flags = rec
                .iter()
                .skip(1)
                .map(parse_flag)
                .collect::<Option<Vec<bool>>>()
                .ok_or_else(|| Error::data(path, format!("row {} (`{id}`): cells must be 0 or 1", line + 2)))?;
            if rows.insert(id.clone(), flags).is_some() {
                return Err(Error::data(path, format!("duplicate id `{id}`")));
            }
        }
        Ok(AttributeTable { names, rows })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub name: String,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    /// Absent when nothing was predicted positive.
    pub precision: Option<f64>,
    /// Absent when the reference has no positives.
    pub recall: Option<f64>,
    /// Absent whenever recall is.
    pub f1: Option<f64>,
}

impl AttributeStats {
    pub fn from_counts(name: &str, tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let recall = ratio(tp, tp + fn_);
        AttributeStats {
            name: name.to_string(),
            tp,
            fp,
            fn_,
            tn,
            accuracy: (tp + tn) as f64 / (tp + fp + fn_ + tn) as f64,
            precision: ratio(tp, tp + fp),
            recall,
            f1: recall.and(ratio(2 * tp, 2 * tp + fp + fn_)),
        }
    }
}

/// Means over attributes, each skipping absent values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub images: usize,
    pub attributes: Vec<AttributeStats>,
    pub average: MacroAverage,
}

impl ConcordanceReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<20}{:>10}{:>10}{:>10}{:>10}\n",
            "attribute", "accuracy", "precision", "recall", "f1"
        );
        let mut row = |name: &str, acc: f64, p: Option<f64>, r: Option<f64>, f: Option<f64>| {
            out.push_str(&format!(
                "{name:<20}{acc:>10.4}{:>10}{:>10}{:>10}\n",
                fmt_opt(p),
                fmt_opt(r),
                fmt_opt(f)
            ));
        };
        for a in &self.attributes {
            row(&a.name, a.accuracy, a.precision, a.recall, a.f1);
        }
        let avg = &self.average;
        row("average", avg.accuracy, avg.precision, avg.recall, avg.f1);
        out
    }
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Probe predictions on real images are the reference, those on generated
/// images the prediction.
pub fn attribute_concordance(
    real: &AttributeTable,
    generated: &AttributeTable,
) -> Result<ConcordanceReport> {
    if real.names != generated.names {
        return Err(Error::shape(format!(
            "attribute columns differ: [{}] vs [{}]",
            real.names.join(", "),
            generated.names.join(", ")
        )));
    }
    check_same_ids("attribute tables", real.rows.keys(), generated.rows.keys())?;
    if real.rows.is_empty() || real.names.is_empty() {
        return Err(Error::shape("attribute tables are empty"));
    }
    let k = real.names.len();
    let mut counts = vec![[0u64; 4]; k];
    for (id, truth) in &real.rows {
        let pred = &generated.rows[id];
        if truth.len() != k || pred.len() != k {
            return Err(Error::shape(format!("`{id}`: expected {k} attribute cells")));
        }
        for (j, (&t, &p)) in truth.iter().zip(pred).enumerate() {
            let slot = match (t, p) {
                (true, true) => 0,
                (false, true) => 1,
                (true, false) => 2,
                (false, false) => 3,
            };
            counts[j][slot] += 1;
        }
    }
    let attributes: Vec<AttributeStats> = real
        .names
        .iter()
        .zip(&counts)
        .map(|(name, c)| AttributeStats::from_counts(name, c[0], c[1], c[2], c[3]))
        .collect();
    let average = MacroAverage {
        accuracy: attributes.iter().map(|a| a.accuracy).sum::<f64>() / k as f64,
        precision: mean_present(attributes.iter().map(|a| a.precision)),
        recall: mean_present(attributes.iter().map(|a| a.recall)),
        f1: mean_present(attributes.iter().map(|a| a.f1)),
    };
    Ok(ConcordanceReport {
        images: real.rows.len(),
        attributes,
        average,
    })
}
