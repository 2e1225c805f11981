use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

fn even_dims<T: Real>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::invalid(
            op,
            format!("odd spatial size {h}x{w}; 2x pooling needs even sizes"),
        ));
    }
    Ok((n, c, h, w))
}

/// 2x2 max pooling, stride 2. Returns the output and the flat argmax per output cell.
pub(crate) fn max_pool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = even_dims("max_pool2", x)?;
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                let o = (plane * ho + oy) * wo + ox;
                od[o] = xd[best];
                arg[o] = best as u32;
            }
        }
    }
    Ok((out, arg))
}

pub(crate) fn scatter_argmax<T: Real>(shape: &[usize], arg: &[u32], g: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(shape);
    let d = dx.data_mut();
    for (&i, &gv) in arg.iter().zip(g.data()) {
        d[i as usize] = d[i as usize] + gv;
    }
    dx
}

pub(crate) fn avg_pool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = even_dims("avg_pool2", x)?;
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let xd = x.data();
    let out = Tensor::from_fn(&[n, c, ho, wo], |o| {
        let plane = o / (ho * wo);
        let (oy, ox) = ((o / wo) % ho, o % wo);
        let i = plane * h * w + 2 * oy * w + 2 * ox;
        (xd[i] + xd[i + 1] + xd[i + w] + xd[i + w + 1]) * quarter
    });
    Ok(out)
}

pub(crate) fn avg_pool2_backward<T: Real>(shape: &[usize], g: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let gd = g.data();
    Ok(Tensor::from_fn(&[n, c, h, w], |i| {
        let plane = i / (h * w);
        let (y, x) = ((i / w) % h, i % w);
        gd[(plane * ho + y / 2) * wo + x / 2] * quarter
    }))
}

/// Mean over the channel axis: `(n, c, h, w) -> (n, 1, h, w)`.
pub(crate) fn channel_mean<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let p = h * w;
    let inv = T::one() / T::from_usize(c).expect("channel count");
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    for i in 0..n {
        let dst = &mut out.data_mut()[i * p..(i + 1) * p];
        for ch in 0..c {
            let src = &x.data()[(i * c + ch) * p..(i * c + ch + 1) * p];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
        for d in dst.iter_mut() {
            *d = *d * inv;
        }
    }
    Ok(out)
}

pub(crate) fn channel_mean_backward<T: Real>(shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let (c, p) = (shape[1], shape[2] * shape[3]);
    let inv = T::one() / T::from_usize(c).expect("channel count");
    let gd = g.data();
    Tensor::from_fn(shape, |i| {
        let n = i / (c * p);
        gd[n * p + i % p] * inv
    })
}

pub(crate) fn channel_max<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    let p = h * w;
    let xd = x.data();
    let mut arg = vec![0u32; n * p];
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    for i in 0..n {
        for q in 0..p {
            let mut best = i * c * p + q;
            for ch in 1..c {
                let idx = (i * c + ch) * p + q;
                if xd[idx] > xd[best] {
                    best = idx;
                }
            }
            out.data_mut()[i * p + q] = xd[best];
            arg[i * p + q] = best as u32;
        }
    }
    Ok((out, arg))
}

/// Global mean over space: `(n, c, h, w) -> (n, c, 1, 1)`.
pub(crate) fn spatial_mean<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let p = h * w;
    let inv = T::one() / T::from_usize(p).expect("pixel count");
    let xd = x.data();
    Ok(Tensor::from_fn(&[n, c, 1, 1], |i| {
        xd[i * p..(i + 1) * p].iter().copied().sum::<T>() * inv
    }))
}

pub(crate) fn spatial_mean_backward<T: Real>(shape: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let p = shape[2] * shape[3];
    let inv = T::one() / T::from_usize(p).expect("pixel count");
    let gd = g.data();
    Tensor::from_fn(shape, |i| gd[i / p] * inv)
}

pub(crate) fn spatial_max<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    let p = h * w;
    let xd = x.data();
    let mut arg = vec![0u32; n * c];
    let mut out = Tensor::zeros(&[n, c, 1, 1]);
    for plane in 0..n * c {
        let mut best = plane * p;
        for idx in plane * p + 1..(plane + 1) * p {
            if xd[idx] > xd[best] {
                best = idx;
            }
        }
        out.data_mut()[plane] = xd[best];
        arg[plane] = best as u32;
    }
    Ok((out, arg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_of_constant_is_constant() {
        let x = Tensor::<f64>::full(&[1, 2, 4, 4], 3.5);
        let (y, _) = max_pool2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn odd_size_is_a_policy_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 5, 4]);
        assert!(max_pool2(&x).is_err());
        assert!(avg_pool2(&x).is_err());
    }

    #[test]
    fn channel_pooling_of_constant_agrees() {
        let x = Tensor::<f64>::full(&[1, 8, 3, 3], 3.0);
        let mean = channel_mean(&x).unwrap();
        let (max, _) = channel_max(&x).unwrap();
        assert_eq!(mean, max);
    }

    #[test]
    fn spatial_pools() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64);
        assert_eq!(spatial_mean(&x).unwrap().data(), &[1.5, 5.5]);
        assert_eq!(spatial_max(&x).unwrap().0.data(), &[3.0, 7.0]);
    }
}
