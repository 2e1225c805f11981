//! Seeded synthetic data: soft elliptical "hippocampus-like" targets and
//! dimmer round distractors over a textured, noisy background.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::preprocess::zscore;
use super::{SegmentationSample, VolumeRecord};

const TARGET_AMPLITUDE: f64 = 1.0;
const DISTRACTOR_AMPLITUDE: f64 = 0.45;
const EDGE_SHARPNESS: f64 = 10.0;
const NOISE_STD: f64 = 0.1;
const MIN_FG: f64 = 0.01;
const MAX_FG: f64 = 0.25;

fn soft(r: f64) -> f64 {
    1.0 / (1.0 + ((r - 1.0) * EDGE_SHARPNESS).exp())
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Normalised radius: 1 on the boundary.
    fn radius(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }
}

fn one_image(size: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<u8>) {
    let s = size as f64;
    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");
    loop {
        let targets: Vec<Ellipse> = (0..rng.gen_range(1..=2))
            .map(|_| Ellipse {
                cy: rng.gen_range(0.2..0.8) * s,
                cx: rng.gen_range(0.2..0.8) * s,
                a: rng.gen_range(0.12..0.25) * s,
                b: rng.gen_range(0.12..0.25) * s,
                theta: rng.gen_range(0.0..PI),
            })
            .collect();
        let mut distractors = Vec::new();
        for _ in 0..rng.gen_range(1..=2) {
            let r = rng.gen_range(0.06..0.12) * s;
            let d = Ellipse {
                cy: rng.gen_range(0.1..0.9) * s,
                cx: rng.gen_range(0.1..0.9) * s,
                a: r,
                b: r,
                theta: 0.0,
            };
            if targets.iter().all(|t| t.radius(d.cy, d.cx) > 1.6) {
                distractors.push(d);
            }
        }
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(0.05..0.15),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let mut image = Vec::with_capacity(size * size);
        let mut mask = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
                let mut v: f64 = waves.iter().map(|&(a, fy, fx, ph)| a * (fy * yf + fx * xf + ph).sin()).sum();
                let mut inside = false;
                for t in &targets {
                    let r = t.radius(yf, xf);
                    v += TARGET_AMPLITUDE * soft(r);
                    inside |= r <= 1.0;
                }
                for d in &distractors {
                    v += DISTRACTOR_AMPLITUDE * soft(d.radius(yf, xf));
                }
                v += noise.sample(rng);
                image.push(v as f32);
                mask.push(inside as u8);
            }
        }
        let fg = mask.iter().filter(|&&m| m == 1).count() as f64 / (size * size) as f64;
        if (MIN_FG..=MAX_FG).contains(&fg) {
            zscore(&mut image);
            return (image, mask);
        }
    }
}

/// `n` independent `size`x`size` samples. Sample `i` only depends on
/// `(seed, i)`, and every mask has a foreground fraction in `[0.01, 0.25]`.
pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Vec<SegmentationSample> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (image, mask) = one_image(size, &mut rng);
            SegmentationSample {
                height: size,
                width: size,
                image,
                mask,
                subject_id: format!("synth{seed}-{i:05}"),
                slice_index: 0,
                is_noise: false,
            }
        })
        .collect()
}

/// A synthetic scan with two adjacent ellipsoids labelled 1 and 2, for
/// exercising the volume pipeline.
pub fn synth_volume(subject_id: &str, dims: [usize; 3], seed: u64) -> VolumeRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.2).expect("finite std");
    let c: Vec<f64> = dims.iter().map(|&d| d as f64 * rng.gen_range(0.4..0.6)).collect();
    let r: Vec<f64> = dims.iter().map(|&d| (d as f64 * rng.gen_range(0.08..0.14)).max(1.5)).collect();
    let n: usize = dims.iter().product();
    let mut voxels = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let p = [i as f64, j as f64, k as f64];
                let rr = (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>().sqrt();
                let inside = rr <= 1.0;
                voxels.push((100.0 + 80.0 * soft(rr) + 10.0 * noise.sample(&mut rng)) as f32);
                labels.push(if !inside { 0 } else if p[2] < c[2] { 1 } else { 2 });
            }
        }
    }
    VolumeRecord {
        dims,
        voxels,
        labels,
        spacing: [1.0; 3],
        subject_id: subject_id.to_string(),
    }
}
