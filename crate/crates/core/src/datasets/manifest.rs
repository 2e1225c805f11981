use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<PathBuf>,
    pub fold: usize,
    pub slices: usize,
    pub noise_slices: usize,
}

/// Subject list with cross-validation fold assignment, stored as JSON next
/// to the prepared samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub folds: usize,
    pub seed: u64,
    pub roi_size: usize,
    pub samples_file: String,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CoreError::Data(e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CoreError::format(path, e.to_string()))
    }

    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.subjects.iter().find(|s| s.id == subject).map(|s| s.fold)
    }

    pub fn subjects_in(&self, fold: usize) -> Vec<&str> {
        self.subjects.iter().filter(|s| s.fold == fold).map(|s| s.id.as_str()).collect()
    }
}

/// Fold index for each subject: a seeded shuffle dealt round-robin, so fold
/// sizes differ by at most one.
pub fn assign_folds(subjects: &[String], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds == 0 {
        return Err(CoreError::Config("folds must be at least 1".into()));
    }
    if folds > subjects.len() {
        return Err(CoreError::Config(format!(
            "cannot split {} subjects into {folds} folds",
            subjects.len()
        )));
    }
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.sort_by(|&a, &b| subjects[a].cmp(&subjects[b]));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![0; subjects.len()];
    for (pos, &idx) in order.iter().enumerate() {
        out[idx] = pos % folds;
    }
    Ok(out)
}
