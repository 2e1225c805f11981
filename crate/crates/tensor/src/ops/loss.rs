use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-class weights for binary cross-entropy.
///
/// Balanced weighting uses inverse class frequency, `N / (K * N_class + eps)`,
/// where `K` is the number of classes present in the target. With both classes
/// present this is `N / (2 N_class + eps)`; a target holding a single class gets
/// weight ~1, so that case degrades to plain BCE.
pub(crate) fn class_weights<T: Real>(target: &[T], balanced: bool, eps: f64) -> (f64, f64) {
    if !balanced {
        return (1.0, 1.0);
    }
    let n = target.len() as f64;
    let n_pos: f64 = target.iter().map(|v| v.as_f64()).sum();
    let n_neg = n - n_pos;
    let present = (n_pos > 0.0) as u32 + (n_neg > 0.0) as u32;
    let k = present.max(1) as f64;
    (n / (k * n_pos + eps), n / (k * n_neg + eps))
}

pub(crate) struct BceOut<T> {
    pub loss: Tensor<T>,
    pub clamped: usize,
    pub weights: (f64, f64),
}

pub(crate) fn bce<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, balanced: bool, eps: f64) -> Result<BceOut<T>> {
    if pred.shape() != target.shape() {
        return Err(TensorError::invalid(
            "bce",
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    let weights = class_weights(target.data(), balanced, eps);
    let n = pred.numel() as f64;
    let mut clamped = 0;
    let mut acc = 0.0;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let raw = p.as_f64();
        let p = raw.clamp(eps, 1.0 - eps);
        if p != raw {
            clamped += 1;
        }
        let t = t.as_f64();
        acc -= weights.0 * t * p.ln() + weights.1 * (1.0 - t) * (1.0 - p).ln();
    }
    Ok(BceOut {
        loss: Tensor::scalar(T::of(acc / n)),
        clamped,
        weights,
    })
}

/// Gradient w.r.t. the prediction. Clamped entries pass the gradient of the
/// clamped value straight through so saturated mistakes still get a signal.
pub(crate) fn bce_backward<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: (f64, f64),
    eps: f64,
    g: T,
) -> Tensor<T> {
    let n = pred.numel() as f64;
    let g = g.as_f64();
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.as_f64().clamp(eps, 1.0 - eps);
            let t = t.as_f64();
            T::of(-g / n * (weights.0 * t / p - weights.1 * (1.0 - t) / (1.0 - p)))
        })
        .collect();
    Tensor::from_vec(pred.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_prediction_is_ln2_for_any_target() {
        for target in [vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4], vec![1.0; 4], vec![1.0, 1.0, 0.0, 0.0]] {
            let t = Tensor::<f64>::from_vec(vec![4], target).unwrap();
            let p = Tensor::full(&[4], 0.5);
            let out = bce(&p, &t, true, 1e-7).unwrap();
            assert!((out.loss.data()[0] - std::f64::consts::LN_2).abs() < 1e-6);
        }
    }

    #[test]
    fn balanced_target_has_unit_weights() {
        let t = Tensor::<f64>::from_vec(vec![4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let (wp, wn) = class_weights(t.data(), true, 0.0);
        assert_eq!((wp, wn), (1.0, 1.0));
    }
}
