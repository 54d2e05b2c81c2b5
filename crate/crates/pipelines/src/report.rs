use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ribforge_core::EvalTable;
use ribforge_models::ModelWeights;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainReport {
    pub stage: String,
    pub config: Value,
    /// Per-epoch means, one entry per epoch (validation series one entry per
    /// validation run).
    pub losses: BTreeMap<String, Vec<f64>>,
    pub eval: Option<EvalTable>,
    /// CRC32 of the serialised weight file.
    pub weight_digest: String,
    pub elapsed_s: f64,
}

impl TrainReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serialises");
        fs::write(path, text + "\n").map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))
    }

    /// Copy with the wall-clock field zeroed, for rerun comparisons.
    pub fn without_timing(&self) -> Self {
        TrainReport { elapsed_s: 0.0, ..self.clone() }
    }
}

/// Hex CRC32 of the bytes [`ribforge_models::save_weights`] writes.
pub fn weights_digest(w: &ModelWeights) -> Result<String> {
    Ok(format!("{:08x}", crc32fast::hash(&w.to_bytes()?)))
}

/// Named per-epoch loss series with a finiteness guard.
#[derive(Debug)]
pub(crate) struct LossLog {
    stage: &'static str,
    series: BTreeMap<String, Vec<f64>>,
    running: BTreeMap<String, (f64, usize)>,
}

impl LossLog {
    pub fn new(stage: &'static str) -> Self {
        LossLog { stage, series: BTreeMap::new(), running: BTreeMap::new() }
    }

    /// Adds one batch value to the current epoch's mean.
    pub fn add(&mut self, name: &str, value: f64, epoch: usize) -> Result<()> {
        self.check(name, value, epoch)?;
        let e = self.running.entry(name.to_string()).or_insert((0.0, 0));
        e.0 += value;
        e.1 += 1;
        Ok(())
    }

    /// Appends one value directly to a series.
    pub fn push(&mut self, name: &str, value: f64, epoch: usize) -> Result<()> {
        self.check(name, value, epoch)?;
        self.series.entry(name.to_string()).or_default().push(value);
        Ok(())
    }

    /// Closes the epoch: every running mean becomes one series entry.
    pub fn end_epoch(&mut self) {
        for (name, (sum, n)) in std::mem::take(&mut self.running) {
            self.series.entry(name).or_default().push(sum / n.max(1) as f64);
        }
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.series.get(name).and_then(|s| s.last().copied())
    }

    pub fn into_series(self) -> BTreeMap<String, Vec<f64>> {
        self.series
    }

    fn check(&self, name: &str, value: f64, epoch: usize) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(PipelineError::NonFinite { stage: self.stage, series: name.to_string(), epoch })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_means_and_nan_abort() {
        let mut log = LossLog::new("t");
        log.add("a", 1.0, 0).unwrap();
        log.add("a", 3.0, 0).unwrap();
        log.end_epoch();
        log.add("a", 5.0, 1).unwrap();
        log.end_epoch();
        assert_eq!(log.last("a"), Some(5.0));
        let err = log.add("a", f64::NAN, 2).unwrap_err();
        assert!(matches!(err, PipelineError::NonFinite { epoch: 2, .. }));
        assert_eq!(log.into_series()["a"], vec![2.0, 5.0]);
    }
}
