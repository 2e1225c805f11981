use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dsc: Option<f64>,
    pub val_miou: Option<f64>,
    /// Predictions clamped into `[eps, 1 - eps]` by the loss during the epoch.
    pub clamped: usize,
    pub optimizer_step: u64,
    pub improved: bool,
    pub wall_time_s: f64,
}

impl EpochRecord {
    /// Equality of everything except wall time.
    pub fn same_numerics(&self, other: &EpochRecord) -> bool {
        let bits = |v: Option<f64>| v.map(f64::to_bits);
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && bits(self.val_dsc) == bits(other.val_dsc)
            && bits(self.val_miou) == bits(other.val_miou)
            && self.clamped == other.clamped
            && self.optimizer_step == other.optimizer_step
            && self.improved == other.improved
    }
}

/// Per-epoch training record, stored on disk as one JSON object per line.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HistoryLog {
    pub records: Vec<EpochRecord>,
}

impl HistoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn same_numerics(&self, other: &HistoryLog) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.same_numerics(b))
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| CoreError::format(path, format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HistoryLog { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_jsonl(&text, path)
    }

    /// Appends one record to the file at `path` and to the in-memory log.
    pub fn append(&mut self, record: EpochRecord, path: Option<&Path>) -> Result<()> {
        if let Some(path) = path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| CoreError::io(path, e))?;
            let line = serde_json::to_string(&record).expect("record serialises") + "\n";
            f.write_all(line.as_bytes()).map_err(|e| CoreError::io(path, e))?;
        }
        self.records.push(record);
        Ok(())
    }
}
