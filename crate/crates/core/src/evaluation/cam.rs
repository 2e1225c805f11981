use hfc_tensor::{Graph, ParamStore, Real, Tensor};

use crate::datasets::{batch_tensors, SegmentationSample};
use crate::error::{CoreError, Result};
use crate::network::Model;

/// Heat map in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn is_flat(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }
}

/// Gradient-weighted activation map from a feature `(1, c, h, w)` and the
/// gradient of the target score with respect to it: channel weights are the
/// spatially averaged gradients, the weighted sum is rectified, scaled by its
/// maximum and bilinearly upsampled to `out_h x out_w`.
pub fn cam_from_feature(feature: &Tensor<f64>, grad: &Tensor<f64>, out_h: usize, out_w: usize) -> Result<Heatmap> {
    let (n, c, h, w) = feature.dims4()?;
    if n != 1 || grad.shape() != feature.shape() {
        return Err(CoreError::Precondition(format!(
            "activation map needs a single-item feature and a matching gradient, got {:?} and {:?}",
            feature.shape(),
            grad.shape()
        )));
    }
    if out_h % h != 0 || out_w % w != 0 || out_h / h != out_w / w {
        return Err(CoreError::Precondition(format!(
            "cannot upsample {h}x{w} to {out_h}x{out_w} by an integer factor"
        )));
    }
    let p = h * w;
    let mut map = vec![0.0; p];
    for ch in 0..c {
        let g = &grad.data()[ch * p..(ch + 1) * p];
        let weight = g.iter().sum::<f64>() / p as f64;
        for (m, &a) in map.iter_mut().zip(&feature.data()[ch * p..(ch + 1) * p]) {
            *m += weight * a;
        }
    }
    let max = map.iter().fold(0.0f64, |acc, &v| acc.max(v));
    for v in &mut map {
        *v = if max > 0.0 { v.max(0.0) / max } else { 0.0 };
    }
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_vec(vec![1, 1, h, w], map)?);
    let up = g.upsample(x, out_h / h)?;
    let values = g.take_value(up).into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(Heatmap {
        height: out_h,
        width: out_w,
        values,
    })
}

/// Activation map at the output of the global pyramid attention unit. The
/// target score is the mean logit over pixels predicted as foreground, or
/// over all pixels when nothing is predicted foreground.
pub fn cam<T: Real>(model: &Model, params: &ParamStore<T>, sample: &SegmentationSample) -> Result<Heatmap> {
    let p64: ParamStore<f64> = params.cast();
    let (x, _) = batch_tensors::<f64>(&[sample])?;
    let mut g = Graph::<f64>::new();
    let xi = g.input(x);
    let out = model.forward(&mut g, &p64, xi)?;
    let probs = g.value(out.prob).data().to_vec();
    let positive: Vec<f64> = probs.iter().map(|&p| (p >= 0.5) as u8 as f64).collect();
    let count = positive.iter().sum::<f64>();
    let weights = if count > 0.0 {
        positive.into_iter().map(|v| v / count).collect::<Vec<_>>()
    } else {
        vec![1.0 / probs.len() as f64; probs.len()]
    };
    let wnode = g.input(Tensor::from_vec(g.shape(out.logits).to_vec(), weights)?);
    let weighted = g.mul(out.logits, wnode)?;
    let score = g.sum(weighted);
    let grads = g.backward(score)?;
    let grad = grads
        .get(out.gpa)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(g.shape(out.gpa)));
    cam_from_feature(g.value(out.gpa), &grad, sample.height, sample.width)
}
