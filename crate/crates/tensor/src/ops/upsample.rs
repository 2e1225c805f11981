use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Source taps for integer-factor bilinear upsampling with half-pixel centers
/// (`align_corners = false`): each output index reads `(lo, hi)` with weights
/// `(w_lo, w_hi)`, and coordinates left of the first sample clamp to it.
pub fn bilinear_weights(in_len: usize, factor: usize) -> Vec<(usize, usize, f64, f64)> {
    let out_len = in_len * factor;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = src - lo as f64;
            (lo, hi, 1.0 - frac, frac)
        })
        .collect()
}

pub(crate) fn forward<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if factor == 0 {
        return Err(TensorError::invalid("upsample", "factor must be positive"));
    }
    let (ho, wo) = (h * factor, w * factor);
    let ys = bilinear_weights(h, factor);
    let xs: Vec<(usize, usize, T, T)> = bilinear_weights(w, factor)
        .into_iter()
        .map(|(a, b, wa, wb)| (a, b, T::of(wa), T::of(wb)))
        .collect();
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        let dst = &mut od[plane * ho * wo..(plane + 1) * ho * wo];
        for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
            let (wy0, wy1) = (T::of(wy0), T::of(wy1));
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            let row = &mut dst[oy * wo..(oy + 1) * wo];
            for (d, &(x0, x1, wx0, wx1)) in row.iter_mut().zip(&xs) {
                *d = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
    Ok(out)
}

pub(crate) fn backward<T: Real>(shape: &[usize], factor: usize, g: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (ho, wo) = (h * factor, w * factor);
    let ys = bilinear_weights(h, factor);
    let xs = bilinear_weights(w, factor);
    let mut dx = Tensor::zeros(shape);
    let gd = g.data();
    let dd = dx.data_mut();
    for plane in 0..n * c {
        let src = &gd[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut dd[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in xs.iter().enumerate() {
                let gv = src[oy * wo + ox];
                let (wy0, wy1) = (T::of(wy0), T::of(wy1));
                let (wx0, wx1) = (T::of(wx0), T::of(wx1));
                dst[y0 * w + x0] = dst[y0 * w + x0] + gv * wy0 * wx0;
                dst[y0 * w + x1] = dst[y0 * w + x1] + gv * wy0 * wx1;
                dst[y1 * w + x0] = dst[y1 * w + x0] + gv * wy1 * wx0;
                dst[y1 * w + x1] = dst[y1 * w + x1] + gv * wy1 * wx1;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_ramp_to_four_by_four() {
        // Output column centers map to source x = -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
        let x = Tensor::<f64>::from_vec(vec![1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = forward(&x, 2).unwrap();
        for row in y.data().chunks(4) {
            assert_eq!(row, &[0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f64>::full(&[1, 2, 3, 3], -1.25);
        for f in [2, 4, 8] {
            let y = forward(&x, f).unwrap();
            assert_eq!(y.shape(), &[1, 2, 3 * f, 3 * f]);
            assert!(y.data().iter().all(|&v| (v + 1.25).abs() < 1e-15));
        }
    }

    #[test]
    fn weights_partition_unity() {
        for (_, _, a, b) in bilinear_weights(5, 4) {
            assert!((a + b - 1.0).abs() < 1e-15);
        }
    }
}
