use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::SegmentationSample;
use crate::error::{CoreError, Result};

/// Random augmentation settings. Ranges are `[low, high]` magnitudes; a sign
/// is drawn separately for rotation and translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default = "default_rotation")]
    pub rotation_degrees: [f64; 2],
    #[serde(default = "default_translation")]
    pub translation_fraction: [f64; 2],
    #[serde(default = "default_blur")]
    pub blur_sigma: [f64; 2],
    /// Additive per-image intensity jitter. Single-channel slices have no
    /// channels to permute, so this stands in for channel shuffling.
    #[serde(default = "yes")]
    pub channel_shuffle: bool,
    #[serde(default = "yes")]
    pub flip: bool,
    #[serde(default = "default_jitter_std")]
    pub jitter_std: f64,
    #[serde(default)]
    pub probabilities: AugmentProbabilities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentProbabilities {
    #[serde(default = "half")]
    pub rotation: f64,
    #[serde(default = "half")]
    pub translation: f64,
    #[serde(default = "half")]
    pub flip: f64,
    #[serde(default = "fifth")]
    pub blur: f64,
    #[serde(default = "fifth")]
    pub channel_shuffle: f64,
}

fn default_rotation() -> [f64; 2] {
    [0.0, 15.0]
}
fn default_translation() -> [f64; 2] {
    [0.0, 0.1]
}
fn default_blur() -> [f64; 2] {
    [0.5, 1.0]
}
fn default_jitter_std() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}
fn half() -> f64 {
    0.5
}
fn fifth() -> f64 {
    0.2
}

impl Default for AugmentProbabilities {
    fn default() -> Self {
        AugmentProbabilities {
            rotation: half(),
            translation: half(),
            flip: half(),
            blur: fifth(),
            channel_shuffle: fifth(),
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_degrees: default_rotation(),
            translation_fraction: default_translation(),
            blur_sigma: default_blur(),
            channel_shuffle: true,
            flip: true,
            jitter_std: default_jitter_std(),
            probabilities: AugmentProbabilities::default(),
        }
    }
}

impl AugmentConfig {
    /// Every probability zero: samples pass through untouched.
    pub fn none() -> Self {
        AugmentConfig {
            probabilities: AugmentProbabilities {
                rotation: 0.0,
                translation: 0.0,
                flip: 0.0,
                blur: 0.0,
                channel_shuffle: 0.0,
            },
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        let p = &self.probabilities;
        p.rotation == 0.0
            && p.translation == 0.0
            && (p.flip == 0.0 || !self.flip)
            && p.blur == 0.0
            && (p.channel_shuffle == 0.0 || !self.channel_shuffle)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.probabilities;
        for (name, v) in [
            ("rotation", p.rotation),
            ("translation", p.translation),
            ("flip", p.flip),
            ("blur", p.blur),
            ("channel_shuffle", p.channel_shuffle),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::Config(format!("augment probability `{name}` = {v} is outside [0, 1]")));
            }
        }
        for (name, [lo, hi]) in [
            ("rotation_degrees", self.rotation_degrees),
            ("translation_fraction", self.translation_fraction),
            ("blur_sigma", self.blur_sigma),
        ] {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(CoreError::Config(format!(
                    "augment range `{name}` = [{lo}, {hi}] must be non-negative and ordered"
                )));
            }
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(CoreError::Config(format!("augment jitter_std = {} must be non-negative", self.jitter_std)));
        }
        Ok(())
    }
}

fn fill_value(s: &SegmentationSample) -> f32 {
    s.image.iter().copied().fold(f32::INFINITY, f32::min)
}

/// Rotation about the image center. Quarter turns of square images are exact
/// permutations; other angles resample the image bilinearly and the mask by
/// nearest neighbor, filling uncovered pixels with the image minimum and
/// background.
pub fn rotate(s: &SegmentationSample, degrees: f64) -> SegmentationSample {
    let (h, w) = (s.height, s.width);
    let quarter = degrees / 90.0;
    if h == w && quarter == quarter.round() {
        let k = (quarter.round() as i64).rem_euclid(4);
        let src = |y: usize, x: usize| -> usize {
            match k {
                0 => y * w + x,
                1 => x * w + (w - 1 - y),
                2 => (h - 1 - y) * w + (w - 1 - x),
                _ => (h - 1 - x) * w + y,
            }
        };
        let mut out = s.clone();
        for y in 0..h {
            for x in 0..w {
                out.image[y * w + x] = s.image[src(y, x)];
                out.mask[y * w + x] = s.mask[src(y, x)];
            }
        }
        return out;
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let fill = fill_value(s);
    let mut out = s.clone();
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sy = cos * dy + sin * dx + cy;
            let sx = -sin * dy + cos * dx + cx;
            let (ny, nx) = (sy.round(), sx.round());
            out.mask[y * w + x] = if ny >= 0.0 && nx >= 0.0 && (ny as usize) < h && (nx as usize) < w {
                s.mask[ny as usize * w + nx as usize]
            } else {
                0
            };
            out.image[y * w + x] = bilinear(&s.image, h, w, sy, sx, fill);
        }
    }
    out
}

fn bilinear(img: &[f32], h: usize, w: usize, y: f64, x: f64, fill: f32) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            fill as f64
        } else {
            img[yy as usize * w + xx as usize] as f64
        }
    };
    let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0))
        + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0));
    v as f32
}

/// Integer shift by `(dy, dx)` pixels.
pub fn translate(s: &SegmentationSample, dy: i64, dx: i64) -> SegmentationSample {
    let (h, w) = (s.height as i64, s.width as i64);
    let fill = fill_value(s);
    let mut out = s.clone();
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = (y - dy, x - dx);
            let o = (y * w + x) as usize;
            if (0..h).contains(&sy) && (0..w).contains(&sx) {
                let i = (sy * w + sx) as usize;
                out.image[o] = s.image[i];
                out.mask[o] = s.mask[i];
            } else {
                out.image[o] = fill;
                out.mask[o] = 0;
            }
        }
    }
    out
}

/// Left-right mirror.
pub fn flip(s: &SegmentationSample) -> SegmentationSample {
    let w = s.width;
    let mut out = s.clone();
    for (dst, src) in out.image.chunks_mut(w).zip(s.image.chunks(w)) {
        dst.iter_mut().zip(src.iter().rev()).for_each(|(d, v)| *d = *v);
    }
    for (dst, src) in out.mask.chunks_mut(w).zip(s.mask.chunks(w)) {
        dst.iter_mut().zip(src.iter().rev()).for_each(|(d, v)| *d = *v);
    }
    out
}

/// Separable Gaussian blur of the image with clamped borders. The mask is untouched.
pub fn blur(s: &SegmentationSample, sigma: f64) -> SegmentationSample {
    if sigma <= 0.0 {
        return s.clone();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let (h, w) = (s.height as i64, s.width as i64);
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut dst = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let d = j as i64 - r;
                    let (yy, xx) = if horizontal {
                        (y, (x + d).clamp(0, w - 1))
                    } else {
                        ((y + d).clamp(0, h - 1), x)
                    };
                    acc += kv * src[(yy * w + xx) as usize] as f64;
                }
                dst[(y * w + x) as usize] = acc as f32;
            }
        }
        dst
    };
    let mut out = s.clone();
    out.image = pass(&pass(&s.image, true), false);
    out
}

pub fn jitter(s: &SegmentationSample, offset: f32) -> SegmentationSample {
    let mut out = s.clone();
    out.image.iter_mut().for_each(|v| *v += offset);
    out
}

fn magnitude<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    let m = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    if rng.gen_bool(0.5) {
        -m
    } else {
        m
    }
}

/// Applies rotation, translation, flip, blur and intensity jitter, each with
/// its own probability, in that order.
pub fn augment<R: Rng + ?Sized>(s: &SegmentationSample, cfg: &AugmentConfig, rng: &mut R) -> SegmentationSample {
    let p = &cfg.probabilities;
    let mut out = s.clone();
    if p.rotation > 0.0 && rng.gen_bool(p.rotation) {
        out = rotate(&out, magnitude(rng, cfg.rotation_degrees));
    }
    if p.translation > 0.0 && rng.gen_bool(p.translation) {
        let fy = magnitude(rng, cfg.translation_fraction);
        let fx = magnitude(rng, cfg.translation_fraction);
        out = translate(
            &out,
            (fy * out.height as f64).round() as i64,
            (fx * out.width as f64).round() as i64,
        );
    }
    if cfg.flip && p.flip > 0.0 && rng.gen_bool(p.flip) {
        out = flip(&out);
    }
    if p.blur > 0.0 && rng.gen_bool(p.blur) {
        let [lo, hi] = cfg.blur_sigma;
        let sigma = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        out = blur(&out, sigma);
    }
    if cfg.channel_shuffle && p.channel_shuffle > 0.0 && rng.gen_bool(p.channel_shuffle) && cfg.jitter_std > 0.0 {
        let offset = Normal::new(0.0, cfg.jitter_std).expect("validated std").sample(rng);
        out = jitter(&out, offset as f32);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(h: usize, w: usize) -> SegmentationSample {
        SegmentationSample {
            height: h,
            width: w,
            image: (0..h * w).map(|i| i as f32).collect(),
            mask: (0..h * w).map(|i| ((i * 7) % 3 == 0) as u8).collect(),
            subject_id: "s".into(),
            slice_index: 0,
            is_noise: false,
        }
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let s = sample(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&s, &AugmentConfig::none(), &mut rng), s);
    }

    #[test]
    fn quarter_turns_compose() {
        let s = sample(6, 6);
        let twice = rotate(&rotate(&s, 90.0), 90.0);
        assert_eq!(twice.mask, rotate(&s, 180.0).mask);
        assert_eq!(rotate(&twice, 180.0), s);
        // (0, 0) moves to the top-right corner under a clockwise quarter turn
        // of the sampling grid.
        assert_eq!(rotate(&s, 90.0).image[0], s.image[5]);
    }

    #[test]
    fn masks_stay_binary() {
        let s = sample(16, 16);
        let cfg = AugmentConfig {
            probabilities: AugmentProbabilities {
                rotation: 1.0,
                translation: 1.0,
                flip: 1.0,
                blur: 1.0,
                channel_shuffle: 1.0,
            },
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = augment(&s, &cfg, &mut rng);
            assert_eq!((a.height, a.width, a.image.len()), (16, 16, 256));
            assert!(a.mask.iter().all(|&m| m <= 1));
        }
    }

    #[test]
    fn flip_is_involution_and_blur_keeps_mean() {
        let s = sample(5, 7);
        assert_eq!(flip(&flip(&s)), s);
        let c = SegmentationSample {
            image: vec![2.5; 35],
            ..s.clone()
        };
        let b = blur(&c, 1.0);
        assert!(b.image.iter().all(|v| (v - 2.5).abs() < 1e-5));
        assert_eq!(b.mask, c.mask);
    }

    #[test]
    fn translate_fills_background() {
        let s = sample(4, 4);
        let t = translate(&s, 1, 0);
        assert_eq!(&t.image[4..], &s.image[..12]);
        assert!(t.mask[..4].iter().all(|&m| m == 0));
        assert_eq!(t.image[0], 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = AugmentConfig::default();
        c.probabilities.blur = 1.5;
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.rotation_degrees = [10.0, 5.0];
        assert!(c.validate().is_err());
    }
}
