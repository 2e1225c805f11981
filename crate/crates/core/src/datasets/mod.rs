//! Volume ingestion, ROI/slice preprocessing, noise-slice injection, a
//! synthetic stand-in dataset and the on-disk sample/manifest formats.

mod manifest;
mod prepare;
mod preprocess;
mod store;
mod synth;
mod volume;

pub use manifest::{assign_folds, DatasetManifest, SubjectEntry};
pub use prepare::{
    discover_subjects, prepare_synthetic, prepare_volumes, split_fold, PrepareConfig, Prepared, Splits, SubjectFiles,
    MANIFEST_FILE, SAMPLES_FILE,
};
pub use preprocess::{extract_roi, inject_noise_slices, slice_volume, NoiseOutcome};
pub use store::{read_samples, write_samples};
pub use synth::{synth_dataset, synth_volume};
pub use volume::{load_volume, read_raw, write_nifti, write_raw, RawDType};

use crate::error::{CoreError, Result};

/// One 2D training/evaluation slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSample {
    pub height: usize,
    pub width: usize,
    /// Row-major intensities.
    pub image: Vec<f32>,
    /// Row-major binary mask (0 or 1).
    pub mask: Vec<u8>,
    pub subject_id: String,
    pub slice_index: usize,
    pub is_noise: bool,
}

impl SegmentationSample {
    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.image.len() != n || self.mask.len() != n {
            return Err(CoreError::Data(format!(
                "sample {}#{}: image/mask lengths {}/{} do not match {}x{}",
                self.subject_id,
                self.slice_index,
                self.image.len(),
                self.mask.len(),
                self.height,
                self.width
            )));
        }
        if !self.image.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Data(format!(
                "sample {}#{}: non-finite intensity",
                self.subject_id, self.slice_index
            )));
        }
        if self.mask.iter().any(|&m| m > 1) {
            return Err(CoreError::Data(format!(
                "sample {}#{}: mask is not binary",
                self.subject_id, self.slice_index
            )));
        }
        Ok(())
    }

    /// `subject#slice`, used as the sample id in reports.
    pub fn id(&self) -> String {
        format!("{}#{}", self.subject_id, self.slice_index)
    }

    pub fn foreground(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// A 3D scan with its label map. Arrays are stored in C order with the last
/// axis fastest; index `(i, j, k)` lives at `(i * d1 + j) * d2 + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRecord {
    pub dims: [usize; 3],
    pub voxels: Vec<f32>,
    pub labels: Vec<u8>,
    pub spacing: [f32; 3],
    pub subject_id: String,
}

impl VolumeRecord {
    pub fn validate(&self) -> Result<()> {
        let n: usize = self.dims.iter().product();
        if self.voxels.len() != n || self.labels.len() != n {
            return Err(CoreError::Data(format!(
                "volume {}: dims {:?} imply {n} voxels, got {} intensities and {} labels",
                self.subject_id,
                self.dims,
                self.voxels.len(),
                self.labels.len()
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(CoreError::Data(format!(
                "volume {}: spacing {:?} must be positive",
                self.subject_id, self.spacing
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l > 2) {
            return Err(CoreError::Data(format!(
                "volume {}: label value {bad} outside {{0, 1, 2}}",
                self.subject_id
            )));
        }
        Ok(())
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// Union of the two hippocampus labels.
    pub fn is_foreground(&self, idx: usize) -> bool {
        self.labels[idx] > 0
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }
}

/// Stacks same-sized samples into `(n, 1, h, w)` image and mask tensors.
pub fn batch_tensors<T: hfc_tensor::Real>(
    samples: &[&SegmentationSample],
) -> Result<(hfc_tensor::Tensor<T>, hfc_tensor::Tensor<T>)> {
    let first = samples
        .first()
        .ok_or_else(|| CoreError::Precondition("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut img = Vec::with_capacity(samples.len() * h * w);
    let mut msk = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(CoreError::Precondition(format!(
                "batch mixes {h}x{w} and {}x{} samples",
                s.height, s.width
            )));
        }
        img.extend(s.image.iter().map(|&v| T::of(v as f64)));
        msk.extend(s.mask.iter().map(|&m| T::of(m as f64)));
    }
    let shape = vec![samples.len(), 1, h, w];
    Ok((
        hfc_tensor::Tensor::from_vec(shape.clone(), img)?,
        hfc_tensor::Tensor::from_vec(shape, msk)?,
    ))
}
