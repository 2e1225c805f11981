use rand::Rng;

use super::{SegmentationSample, VolumeRecord};
use crate::error::{CoreError, Result};

/// Crops a `size`^3 cube around the foreground centroid (or `center`), with
/// zero padding outside the volume, then z-scores the cube intensities.
///
/// The cube origin on each axis is `round(center) - size / 2`; it is not
/// shifted to stay inside the volume, so a shift of the foreground shifts the
/// cube by the same amount.
pub fn extract_roi(v: &VolumeRecord, size: usize, center: Option<[f64; 3]>) -> Result<VolumeRecord> {
    v.validate()?;
    if size == 0 {
        return Err(CoreError::Config("roi size must be positive".into()));
    }
    let center = match center {
        Some(c) => c,
        None => centroid(v).ok_or_else(|| {
            CoreError::Data(format!(
                "volume {}: empty foreground and no ROI center given",
                v.subject_id
            ))
        })?,
    };
    let origin: Vec<i64> = center.iter().map(|&c| c.round() as i64 - (size / 2) as i64).collect();
    let n = size * size * size;
    let mut voxels = vec![0f32; n];
    let mut labels = vec![0u8; n];
    for i in 0..size {
        let si = origin[0] + i as i64;
        if si < 0 || si >= v.dims[0] as i64 {
            continue;
        }
        for j in 0..size {
            let sj = origin[1] + j as i64;
            if sj < 0 || sj >= v.dims[1] as i64 {
                continue;
            }
            for k in 0..size {
                let sk = origin[2] + k as i64;
                if sk < 0 || sk >= v.dims[2] as i64 {
                    continue;
                }
                let src = v.index(si as usize, sj as usize, sk as usize);
                let dst = (i * size + j) * size + k;
                voxels[dst] = v.voxels[src];
                labels[dst] = v.labels[src];
            }
        }
    }
    zscore(&mut voxels);
    Ok(VolumeRecord {
        dims: [size; 3],
        voxels,
        labels,
        spacing: v.spacing,
        subject_id: v.subject_id.clone(),
    })
}

fn centroid(v: &VolumeRecord) -> Option<[f64; 3]> {
    let mut acc = [0f64; 3];
    let mut count = 0usize;
    for i in 0..v.dims[0] {
        for j in 0..v.dims[1] {
            for k in 0..v.dims[2] {
                if v.is_foreground(v.index(i, j, k)) {
                    acc[0] += i as f64;
                    acc[1] += j as f64;
                    acc[2] += k as f64;
                    count += 1;
                }
            }
        }
    }
    (count > 0).then(|| acc.map(|a| a / count as f64))
}

pub(crate) fn zscore(values: &mut [f32]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        let c = *v as f64 - mean;
        *v = if std > 0.0 { (c / std) as f32 } else { c as f32 };
    }
}

fn slice_of(v: &VolumeRecord, k: usize, is_noise: bool) -> SegmentationSample {
    let (h, w) = (v.dims[0], v.dims[1]);
    let mut image = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let idx = v.index(i, j, k);
            image.push(v.voxels[idx]);
            mask.push(v.is_foreground(idx) as u8);
        }
    }
    SegmentationSample {
        height: h,
        width: w,
        image,
        mask,
        subject_id: v.subject_id.clone(),
        slice_index: k,
        is_noise,
    }
}

/// Slices along the last axis. Takes the contiguous run of slices with
/// foreground that contains the largest-area slice; runs longer than
/// `max_slices` are cut to a window centred on that slice, runs shorter than
/// `min_slices` are widened with neighbouring slices on both sides (the odd
/// extra slice goes after the run).
pub fn slice_volume(v: &VolumeRecord, min_slices: usize, max_slices: usize) -> Result<Vec<SegmentationSample>> {
    v.validate()?;
    if min_slices > max_slices || max_slices == 0 {
        return Err(CoreError::Config(format!(
            "slice range [{min_slices}, {max_slices}] is empty"
        )));
    }
    let depth = v.dims[2];
    let areas: Vec<usize> = (0..depth)
        .map(|k| {
            let mut a = 0;
            for i in 0..v.dims[0] {
                for j in 0..v.dims[1] {
                    a += v.is_foreground(v.index(i, j, k)) as usize;
                }
            }
            a
        })
        .collect();
    let Some((peak, &best)) = areas.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))) else {
        return Ok(Vec::new());
    };
    if best == 0 {
        return Ok(Vec::new());
    }
    let mut lo = peak;
    while lo > 0 && areas[lo - 1] > 0 {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < depth && areas[hi + 1] > 0 {
        hi += 1;
    }
    let len = hi - lo + 1;
    let (start, count) = if len > max_slices {
        let s = peak.saturating_sub((max_slices - 1) / 2).clamp(lo, hi + 1 - max_slices);
        (s, max_slices)
    } else if len < min_slices {
        let want = min_slices.min(depth);
        let extra = want - len;
        let before = extra / 2;
        let s = lo.saturating_sub(before).min(depth - want);
        (s, want)
    } else {
        (lo, len)
    };
    Ok((start..start + count).map(|k| slice_of(v, k, false)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOutcome {
    pub samples: Vec<SegmentationSample>,
    pub injected: usize,
    /// Noise slices that were requested but could not be found.
    pub shortfall: usize,
}

/// Appends empty-mask slices so that noise makes up `fraction` of the result.
///
/// Noise slices come from random `roi_size`^3 cubes of the pool volumes that
/// contain no foreground; each cube is z-scored like a regular ROI and one of
/// its slices is taken.
pub fn inject_noise_slices<R: Rng>(
    samples: Vec<SegmentationSample>,
    pool: &[VolumeRecord],
    fraction: f64,
    roi_size: usize,
    rng: &mut R,
) -> Result<NoiseOutcome> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(CoreError::Config(format!("noise fraction {fraction} outside [0, 1)")));
    }
    let real = samples.iter().filter(|s| !s.is_noise).count();
    let want = (fraction * real as f64 / (1.0 - fraction)).round() as usize;
    let mut out = samples;
    let eligible: Vec<&VolumeRecord> = pool.iter().filter(|v| v.dims.iter().all(|&d| d >= roi_size)).collect();
    let mut injected = 0;
    if want > 0 && !eligible.is_empty() {
        let mut attempts = 0;
        let max_attempts = 50 * want;
        while injected < want && attempts < max_attempts {
            attempts += 1;
            let v = eligible[rng.gen_range(0..eligible.len())];
            let origin: Vec<usize> = v.dims.iter().map(|&d| rng.gen_range(0..=d - roi_size)).collect();
            let center = [0, 1, 2].map(|a| (origin[a] + roi_size / 2) as f64);
            let cube = extract_roi(v, roi_size, Some(center))?;
            if cube.foreground_count() > 0 {
                continue;
            }
            let k = rng.gen_range(0..roi_size);
            let mut s = slice_of(&cube, k, true);
            s.slice_index = origin[2] + k;
            out.push(s);
            injected += 1;
        }
    }
    Ok(NoiseOutcome {
        samples: out,
        injected,
        shortfall: want - injected,
    })
}
