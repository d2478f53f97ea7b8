use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "step,d_loss,g_total,g_mse,g_adv,ms";

/// Losses of one step, measured before that step's updates. `step` counts
/// generator updates from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    /// Absent in mse-only mode.
    pub d_loss: Option<f64>,
    pub g_total: f64,
    pub g_mse: f64,
    pub g_adv: Option<f64>,
    /// Wall time of the step; 0 in deterministic mode.
    pub ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<TrainRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    pub fn push(&mut self, record: TrainRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                opt(r.d_loss),
                r.g_total,
                r.g_mse,
                opt(r.g_adv),
                r.ms
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::data(path, format!("cannot open log: {e}")))?;
        let header = reader
            .headers()
            .map_err(|e| Error::data(path, e.to_string()))?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if header != LOG_HEADER {
            return Err(Error::data(path, format!("unexpected log header `{header}`")));
        }
        let bad = |field: &str, e: &dyn std::fmt::Display| Error::data(path, format!("bad {field}: {e}"));
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::data(path, e.to_string()))?;
            let float = |i: usize, name: &str| -> Result<f64> {
                row[i].parse().map_err(|e| bad(name, &e))
            };
            let maybe = |i: usize, name: &str| -> Result<Option<f64>> {
                if row[i].is_empty() {
                    Ok(None)
                } else {
                    float(i, name).map(Some)
                }
            };
            records.push(TrainRecord {
                step: row[0].parse().map_err(|e| bad("step", &e))?,
                d_loss: maybe(1, "d_loss")?,
                g_total: float(2, "g_total")?,
                g_mse: float(3, "g_mse")?,
                g_adv: maybe(4, "g_adv")?,
                ms: row[5].parse().map_err(|e| bad("ms", &e))?,
            });
        }
        Ok(TrainLog { records })
    }
}
