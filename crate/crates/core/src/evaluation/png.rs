use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::cam::Heatmap;
use crate::datasets::SegmentationSample;
use crate::error::{CoreError, Result};

const SCALE: usize = 4;
const GAP: usize = 2;

fn jet(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |c: f64| ((1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

fn gray(v: f64) -> [u8; 3] {
    let b = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [b, b, b]
}

/// Renders `image | ground truth | activation map | prediction` side by side,
/// each tile scaled up by 4, as RGB8 rows.
pub fn render_panel(sample: &SegmentationSample, heat: &Heatmap, pred: &[f64], threshold: f64) -> Result<(u32, u32, Vec<u8>)> {
    let (h, w) = (sample.height, sample.width);
    if heat.height != h || heat.width != w || pred.len() != h * w {
        return Err(CoreError::Precondition(format!(
            "panel inputs disagree: sample {h}x{w}, map {}x{}, {} predictions",
            heat.height,
            heat.width,
            pred.len()
        )));
    }
    let (lo, hi) = sample
        .image
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-6) as f64;
    let tiles: [Box<dyn Fn(usize) -> [u8; 3]>; 4] = [
        Box::new(|i| gray((sample.image[i] - lo) as f64 / span)),
        Box::new(|i| gray(sample.mask[i] as f64)),
        Box::new(|i| jet(heat.values[i])),
        Box::new(|i| gray((pred[i] >= threshold) as u8 as f64)),
    ];
    let tw = w * SCALE;
    let th = h * SCALE;
    let width = tiles.len() * tw + (tiles.len() - 1) * GAP;
    let mut buf = vec![255u8; width * th * 3];
    for (t, f) in tiles.iter().enumerate() {
        let x0 = t * (tw + GAP);
        for y in 0..th {
            for x in 0..tw {
                let px = f((y / SCALE) * w + x / SCALE);
                let o = (y * width + x0 + x) * 3;
                buf[o..o + 3].copy_from_slice(&px);
            }
        }
    }
    Ok((width as u32, th as u32, buf))
}

pub fn write_panel(path: &Path, sample: &SegmentationSample, heat: &Heatmap, pred: &[f64], threshold: f64) -> Result<()> {
    let (w, h, rgb) = render_panel(sample, heat, pred, threshold)?;
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| CoreError::format(path, e.to_string()))?;
    writer
        .write_image_data(&rgb)
        .map_err(|e| CoreError::format(path, e.to_string()))?;
    Ok(())
}
