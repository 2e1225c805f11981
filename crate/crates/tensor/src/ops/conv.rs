use crate::error::{Result, TensorError};
use crate::real::{gemm, MatView, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let (n, ci, h, w) = x.dims4()?;
        let (co, wci, kh, kw) = weight.dims4()?;
        if ci != wci {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                axis: "channel",
                lhs: ci,
                rhs: wci,
            });
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be positive"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::invalid(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            n,
            ci,
            h,
            w,
            co,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let (ho, wo) = (g.ho, g.wo);
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * ho * wo;
                let off = kx as isize - g.pad as isize;
                for oy in 0..ho {
                    let dst = &mut col[row + oy * wo..row + (oy + 1) * wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let lo = (-off).clamp(0, wo as isize) as usize;
                        let hi = (g.w as isize - off).clamp(lo as isize, wo as isize) as usize;
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        if hi > lo {
                            let s0 = (lo as isize + off) as usize;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride) as isize + off;
                            *d = if ix >= 0 && ix < g.w as isize {
                                src[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (ho, wo) = (g.ho, g.wo);
    for c in 0..g.ci {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * ho * wo;
                let off = kx as isize - g.pad as isize;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &col[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let lo = (-off).clamp(0, wo as isize) as usize;
                        let hi = (g.w as isize - off).clamp(lo as isize, wo as isize) as usize;
                        if hi > lo {
                            let s0 = (lo as isize + off) as usize;
                            for (d, &s) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                                *d = *d + s;
                            }
                        }
                    } else {
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (ox * g.stride) as isize + off;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] = dst[ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.numel() != g.co {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                axis: "bias",
                lhs: b.numel(),
                rhs: g.co,
            });
        }
    }
    let (k, p) = (g.k(), g.p());
    let mut out = Tensor::zeros(&[g.n, g.co, g.ho, g.wo]);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let wmat = MatView::row_major(weight.data(), g.co, k);
    for i in 0..g.n {
        let xi = &x.data()[i * g.ci * g.h * g.w..(i + 1) * g.ci * g.h * g.w];
        let cview = if g.is_pointwise() {
            MatView::row_major(xi, k, p)
        } else {
            im2col(xi, &g, &mut col);
            MatView::row_major(&col[..], k, p)
        };
        let oi = &mut out.data_mut()[i * g.co * p..(i + 1) * g.co * p];
        let beta = match bias {
            Some(b) => {
                for (oc, chunk) in oi.chunks_exact_mut(p).enumerate() {
                    chunk.fill(b.data()[oc]);
                }
                T::one()
            }
            None => T::zero(),
        };
        gemm(T::one(), wmat, cview, beta, oi);
    }
    Ok(out)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub(crate) fn backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x, weight, stride, pad)?;
    let (k, p) = (g.k(), g.p());
    let (need_dx, need_dw, need_db) = need;
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(weight.shape()));
    let mut db = need_db.then(|| Tensor::zeros(&[g.co]));
    let mut col = if g.is_pointwise() || !need_dw {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let mut dcol = if need_dx && !g.is_pointwise() {
        vec![T::zero(); k * p]
    } else {
        Vec::new()
    };
    let wmat = MatView::row_major(weight.data(), g.co, k);
    let in_len = g.ci * g.h * g.w;
    for i in 0..g.n {
        let go = &gout.data()[i * g.co * p..(i + 1) * g.co * p];
        let gmat = MatView::row_major(go, g.co, p);
        if let Some(db) = db.as_mut() {
            for (oc, chunk) in go.chunks_exact(p).enumerate() {
                let s: T = chunk.iter().copied().sum();
                db.data_mut()[oc] = db.data()[oc] + s;
            }
        }
        let xi = &x.data()[i * in_len..(i + 1) * in_len];
        if let Some(dw) = dw.as_mut() {
            let cview = if g.is_pointwise() {
                MatView::row_major(xi, k, p)
            } else {
                im2col(xi, &g, &mut col);
                MatView::row_major(&col[..], k, p)
            };
            gemm(T::one(), gmat, cview.t(), T::one(), dw.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            let dxi = &mut dx.data_mut()[i * in_len..(i + 1) * in_len];
            if g.is_pointwise() {
                gemm(T::one(), wmat.t(), gmat, T::zero(), dxi);
            } else {
                gemm(T::one(), wmat.t(), gmat, T::zero(), &mut dcol);
                col2im(&dcol, &g, dxi);
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}
