use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Concatenates rank-4 tensors along the channel axis.
pub(crate) fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
    let (n, _, h, w) = first.dims4()?;
    let mut total_c = 0;
    for t in parts {
        let (tn, tc, th, tw) = t.dims4()?;
        for (axis, l, r) in [("batch", n, tn), ("height", h, th), ("width", w, tw)] {
            if l != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    axis,
                    lhs: l,
                    rhs: r,
                });
            }
        }
        total_c += tc;
    }
    let p = h * w;
    let mut out = Vec::with_capacity(n * total_c * p);
    for i in 0..n {
        for t in parts {
            let c = t.shape()[1];
            out.extend_from_slice(&t.data()[i * c * p..(i + 1) * c * p]);
        }
    }
    Tensor::from_vec(vec![n, total_c, h, w], out)
}

/// Splits a channel-concatenated gradient back into per-input pieces.
pub(crate) fn split_channels<T: Real>(g: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, _, h, w) = g.dims4()?;
    let p = h * w;
    let total: usize = channels.iter().sum();
    let mut parts: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(n * c * p)).collect();
    for i in 0..n {
        let mut off = i * total * p;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&g.data()[off..off + c * p]);
            off += c * p;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(vec![n, c, h, w], d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_roundtrip() {
        let a = Tensor::<f64>::from_fn(&[2, 1, 2, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 3, 2, 2], |i| 100.0 + i as f64);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        assert_eq!(c.at4(1, 0, 0, 0), 4.0);
        assert_eq!(c.at4(1, 1, 0, 0), 112.0);
        let parts = split_channels(&c, &[1, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn spatial_mismatch_names_axis() {
        let a = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 1, 2, 4]);
        let err = concat_channels(&[&a, &b]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { axis: "width", .. }));
    }
}
