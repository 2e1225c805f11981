//! Whole-dataset preparation and fold splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{assign_folds, DatasetManifest, SubjectEntry};
use super::preprocess::{extract_roi, inject_noise_slices, slice_volume};
use super::synth::synth_dataset;
use super::volume::{load_volume, subject_from_path};
use super::SegmentationSample;
use crate::error::{CoreError, Result};

pub const SAMPLES_FILE: &str = "samples.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectFiles {
    pub id: String,
    pub image: PathBuf,
    pub label: PathBuf,
}

/// Finds image/label pairs in the `imagesTr/` + `labelsTr/` layout, matched
/// by file name. Hidden files are skipped.
pub fn discover_subjects(dir: &Path) -> Result<Vec<SubjectFiles>> {
    let images = dir.join("imagesTr");
    let labels = dir.join("labelsTr");
    if !images.is_dir() || !labels.is_dir() {
        return Err(CoreError::Data(format!(
            "{}: expected imagesTr/ and labelsTr/ subdirectories",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&images).map_err(|e| CoreError::io(&images, e))? {
        let path = entry.map_err(|e| CoreError::io(&images, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if name.starts_with('.') || !path.is_file() {
            continue;
        }
        out.push(SubjectFiles {
            id: subject_from_path(&path),
            label: labels.join(name),
            image: path.clone(),
        });
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    if out.is_empty() {
        return Err(CoreError::Data(format!("{}: no volumes found", images.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub roi_size: usize,
    pub min_slices: usize,
    pub max_slices: usize,
    pub noise_fraction: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            roi_size: 32,
            min_slices: 12,
            max_slices: 20,
            noise_fraction: 1.0 / 3.0,
            folds: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub manifest: DatasetManifest,
    pub samples: Vec<SegmentationSample>,
    /// Noise slices requested but not found, summed over subjects.
    pub noise_shortfall: usize,
}

/// Load, ROI crop, slice and noise injection for every subject. Noise slices
/// for a subject are drawn from that subject's own volume, so they stay in
/// its fold. Any failing subject aborts with the full list of failures.
pub fn prepare_volumes(subjects: &[SubjectFiles], cfg: &PrepareConfig) -> Result<Prepared> {
    if cfg.min_slices > cfg.max_slices || cfg.max_slices > cfg.roi_size {
        return Err(CoreError::Config(format!(
            "slice range {}..={} does not fit a {} cube",
            cfg.min_slices, cfg.max_slices, cfg.roi_size
        )));
    }
    let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
    if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
        return Err(CoreError::Data("duplicate subject ids".into()));
    }
    let folds = assign_folds(&ids, cfg.folds, cfg.seed)?;
    let mut samples = Vec::new();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let mut shortfall = 0;
    for (i, (subj, &fold)) in subjects.iter().zip(&folds).enumerate() {
        let result = (|| -> Result<(Vec<SegmentationSample>, usize, usize)> {
            let mut v = load_volume(&subj.image, &subj.label)?;
            v.subject_id = subj.id.clone();
            let cube = extract_roi(&v, cfg.roi_size, None)?;
            let real = slice_volume(&cube, cfg.min_slices, cfg.max_slices)?;
            let n_real = real.len();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let noise = inject_noise_slices(real, std::slice::from_ref(&v), cfg.noise_fraction, cfg.roi_size, &mut rng)?;
            Ok((noise.samples, n_real, noise.shortfall))
        })();
        match result {
            Ok((s, n_real, short)) => {
                entries.push(SubjectEntry {
                    id: subj.id.clone(),
                    image: Some(subj.image.clone()),
                    label: Some(subj.label.clone()),
                    fold,
                    slices: n_real,
                    noise_slices: s.len() - n_real,
                });
                shortfall += short;
                samples.extend(s);
            }
            Err(e) => failures.push(format!("{}: {e}", subj.id)),
        }
    }
    if !failures.is_empty() {
        return Err(CoreError::Data(format!(
            "{} of {} subjects failed:\n  {}",
            failures.len(),
            subjects.len(),
            failures.join("\n  ")
        )));
    }
    Ok(Prepared {
        manifest: DatasetManifest {
            folds: cfg.folds,
            seed: cfg.seed,
            roi_size: cfg.roi_size,
            samples_file: SAMPLES_FILE.into(),
            subjects: entries,
        },
        samples,
        noise_shortfall: shortfall,
    })
}

/// Synthetic slices, each its own subject.
pub fn prepare_synthetic(n: usize, size: usize, folds: usize, seed: u64) -> Result<Prepared> {
    if size < 16 {
        return Err(CoreError::Config(format!("synthetic size must be at least 16, got {size}")));
    }
    let samples = synth_dataset(n, size, seed);
    let ids: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    let assigned = assign_folds(&ids, folds, seed)?;
    let subjects = ids
        .into_iter()
        .zip(assigned)
        .map(|(id, fold)| SubjectEntry {
            id,
            image: None,
            label: None,
            fold,
            slices: 1,
            noise_slices: 0,
        })
        .collect();
    Ok(Prepared {
        manifest: DatasetManifest {
            folds,
            seed,
            roi_size: size,
            samples_file: SAMPLES_FILE.into(),
            subjects,
        },
        samples,
        noise_shortfall: 0,
    })
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<SegmentationSample>,
    pub val: Vec<SegmentationSample>,
    pub test: Vec<SegmentationSample>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&[SegmentationSample]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(CoreError::Config(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

/// Test split = subjects of `fold`; the remaining subjects are shuffled with
/// `seed` and `val_fraction` of them (rounded, at least one when two or more
/// remain) go to validation.
pub fn split_fold(
    manifest: &DatasetManifest,
    samples: Vec<SegmentationSample>,
    fold: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Splits> {
    if fold >= manifest.folds {
        return Err(CoreError::Config(format!(
            "fold {fold} does not exist (dataset has {} folds)",
            manifest.folds
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(CoreError::Config(format!("val fraction {val_fraction} outside [0, 1)")));
    }
    let mut rest: Vec<&str> = manifest
        .subjects
        .iter()
        .filter(|s| s.fold != fold)
        .map(|s| s.id.as_str())
        .collect();
    rest.sort_unstable();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (val_fraction * rest.len() as f64).round() as usize;
    if val_fraction > 0.0 && n_val == 0 && rest.len() >= 2 {
        n_val = 1;
    }
    let mut role: BTreeMap<&str, u8> = BTreeMap::new();
    for s in &manifest.subjects {
        role.insert(&s.id, if s.fold == fold { 2 } else { 0 });
    }
    for id in &rest[..n_val] {
        role.insert(id, 1);
    }
    let mut out = Splits::default();
    for s in samples {
        match role.get(s.subject_id.as_str()) {
            Some(0) => out.train.push(s),
            Some(1) => out.val.push(s),
            Some(_) => out.test.push(s),
            None => {
                return Err(CoreError::Data(format!(
                    "sample {} belongs to no subject in the manifest",
                    s.id()
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_subject_disjoint() {
        let p = prepare_synthetic(30, 16, 10, 4).unwrap();
        let mut seen = BTreeSet::new();
        for fold in 0..10 {
            let s = split_fold(&p.manifest, p.samples.clone(), fold, 0.1, 1).unwrap();
            assert_eq!(s.test.len(), 3);
            assert_eq!(s.val.len(), 3);
            assert_eq!(s.train.len(), 24);
            for t in &s.test {
                assert!(seen.insert(t.subject_id.clone()));
            }
        }
        assert_eq!(seen.len(), 30);
        assert!(split_fold(&p.manifest, p.samples, 10, 0.1, 1).is_err());
    }
}
