use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-(sample, group) statistics saved by the group-norm forward pass.
#[derive(Debug, Clone)]
pub(crate) struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn group_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
    eps: f64,
) -> Result<(Tensor<T>, GroupStats<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(TensorError::invalid(
            "group_norm",
            format!("{c} channels not divisible into {groups} groups"),
        ));
    }
    if gamma.numel() != c || beta.numel() != c {
        return Err(TensorError::ShapeMismatch {
            op: "group_norm",
            axis: "channel",
            lhs: gamma.numel().min(beta.numel()),
            rhs: c,
        });
    }
    let cpg = c / groups;
    let m = cpg * h * w;
    let mut out = Tensor::zeros(x.shape());
    let mut stats = GroupStats {
        mean: Vec::with_capacity(n * groups),
        rstd: Vec::with_capacity(n * groups),
    };
    let xd = x.data();
    for i in 0..n {
        for g in 0..groups {
            let start = (i * c + g * cpg) * h * w;
            let seg = &xd[start..start + m];
            let mean = seg.iter().map(|v| v.as_f64()).sum::<f64>() / m as f64;
            let var = seg.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / m as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            let (mean_t, rstd_t) = (T::of(mean), T::of(rstd));
            stats.mean.push(mean_t);
            stats.rstd.push(rstd_t);
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
                let off = start + cc * h * w;
                for (o, &v) in out.data_mut()[off..off + h * w].iter_mut().zip(&xd[off..off + h * w]) {
                    *o = (v - mean_t) * rstd_t * ga + be;
                }
            }
        }
    }
    Ok((out, stats))
}

pub(crate) struct GroupNormGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub(crate) fn group_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    groups: usize,
    stats: &GroupStats<T>,
    g: &Tensor<T>,
) -> Result<GroupNormGrads<T>> {
    let (n, c, h, w) = x.dims4()?;
    let cpg = c / groups;
    let p = h * w;
    let m = T::from_usize(cpg * p).expect("group size");
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let (xd, gd) = (x.data(), g.data());
    for i in 0..n {
        for grp in 0..groups {
            let (mean, rstd) = (stats.mean[i * groups + grp], stats.rstd[i * groups + grp]);
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for cc in 0..cpg {
                let ch = grp * cpg + cc;
                let off = (i * c + ch) * p;
                let ga = gamma.data()[ch];
                let (mut sg, mut sb) = (T::zero(), T::zero());
                for q in off..off + p {
                    let xhat = (xd[q] - mean) * rstd;
                    let dxhat = gd[q] * ga;
                    sum_dxhat = sum_dxhat + dxhat;
                    sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                    sg = sg + gd[q] * xhat;
                    sb = sb + gd[q];
                }
                dgamma.data_mut()[ch] = dgamma.data()[ch] + sg;
                dbeta.data_mut()[ch] = dbeta.data()[ch] + sb;
            }
            for cc in 0..cpg {
                let ch = grp * cpg + cc;
                let off = (i * c + ch) * p;
                let ga = gamma.data()[ch];
                for q in off..off + p {
                    let xhat = (xd[q] - mean) * rstd;
                    let dxhat = gd[q] * ga;
                    dx.data_mut()[q] = rstd / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                }
            }
        }
    }
    Ok(GroupNormGrads { dx, dgamma, dbeta })
}

/// Scales each pixel's channel vector to unit L2 norm: `y = x / sqrt(|x|^2 + eps)`.
pub(crate) fn pixel_l2_normalize<T: Real>(x: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, c, h, w) = x.dims4()?;
    let p = h * w;
    let xd = x.data();
    let mut norms = vec![T::zero(); n * p];
    for i in 0..n {
        for q in 0..p {
            let ss: T = (0..c).map(|ch| xd[(i * c + ch) * p + q].powi(2)).sum();
            norms[i * p + q] = (ss + T::of(eps)).sqrt();
        }
    }
    let out = Tensor::from_fn(x.shape(), |idx| {
        let i = idx / (c * p);
        xd[idx] / norms[i * p + idx % p]
    });
    Ok((out, norms))
}

pub(crate) fn pixel_l2_normalize_backward<T: Real>(y: &Tensor<T>, norms: &[T], g: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = y.dims4()?;
    let p = h * w;
    let (yd, gd) = (y.data(), g.data());
    let mut dx = Tensor::zeros(y.shape());
    for i in 0..n {
        for q in 0..p {
            let dot: T = (0..c)
                .map(|ch| {
                    let idx = (i * c + ch) * p + q;
                    gd[idx] * yd[idx]
                })
                .sum();
            for ch in 0..c {
                let idx = (i * c + ch) * p + q;
                dx.data_mut()[idx] = (gd[idx] - yd[idx] * dot) / norms[i * p + q];
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_norm_output_is_standardized() {
        let x = Tensor::<f64>::from_fn(&[2, 4, 3, 3], |i| ((i * 37) % 11) as f64);
        let gamma = Tensor::full(&[4], 1.0);
        let beta = Tensor::zeros(&[4]);
        let (y, _) = group_norm(&x, &gamma, &beta, 2, 1e-12).unwrap();
        for seg in y.data().chunks(18) {
            let mean: f64 = seg.iter().sum::<f64>() / 18.0;
            let var: f64 = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 18.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_group_count() {
        let x = Tensor::<f64>::zeros(&[1, 6, 2, 2]);
        let gamma = Tensor::full(&[6], 1.0);
        let beta = Tensor::zeros(&[6]);
        assert!(group_norm(&x, &gamma, &beta, 4, 1e-5).is_err());
    }

    #[test]
    fn l2_normalized_pixels_have_unit_norm() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 2, 2], |i| i as f64 - 5.0);
        let (y, _) = pixel_l2_normalize(&x, 0.0).unwrap();
        for q in 0..4 {
            let s: f64 = (0..3).map(|c| y.data()[c * 4 + q].powi(2)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
