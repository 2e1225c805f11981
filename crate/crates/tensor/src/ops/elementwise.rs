use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Mul,
}

/// Pads a shape of rank <= 4 with leading ones.
fn as4(shape: &[usize]) -> Result<[usize; 4]> {
    if shape.len() > 4 {
        return Err(TensorError::invalid(
            "broadcast",
            format!("rank > 4 not supported: {shape:?}"),
        ));
    }
    let mut out = [1; 4];
    out[4 - shape.len()..].copy_from_slice(shape);
    Ok(out)
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(TensorError::invalid(
            "broadcast",
            format!("rank mismatch {a:?} vs {b:?}"),
        ));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(TensorError::invalid(
                "broadcast",
                format!("incompatible shapes {a:?} vs {b:?}"),
            )),
        })
        .collect()
}

fn strides(shape: [usize; 4], out: [usize; 4]) -> [usize; 4] {
    let mut s = [0; 4];
    let mut acc = 1;
    for d in (0..4).rev() {
        s[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    s
}

/// Visits every output index with the matching flat offsets into `a` and `b`.
fn for_each_index(
    a: &[usize],
    b: &[usize],
    out: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) -> Result<()> {
    let (a4, b4, o4) = (as4(a)?, as4(b)?, as4(out)?);
    let (sa, sb) = (strides(a4, o4), strides(b4, o4));
    let mut o = 0;
    for i0 in 0..o4[0] {
        for i1 in 0..o4[1] {
            for i2 in 0..o4[2] {
                let base_a = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let base_b = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..o4[3] {
                    f(o, base_a + i3 * sa[3], base_b + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
    Ok(())
}

pub(crate) fn binary_forward<T: Real>(kind: BinaryKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let op = |x: T, y: T| match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Mul => x * y,
    };
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| op(x, y)).collect();
        return Tensor::from_vec(a.shape().to_vec(), data);
    }
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let mut out = Tensor::zeros(&shape);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for_each_index(a.shape(), b.shape(), &shape, |o, ia, ib| {
        od[o] = op(ad[ia], bd[ib]);
    })?;
    Ok(out)
}

pub(crate) fn binary_backward<T: Real>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    need: (bool, bool),
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let mut ga = need.0.then(|| Tensor::zeros(a.shape()));
    let mut gb = need.1.then(|| Tensor::zeros(b.shape()));
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    {
        let mut ga_d = ga.as_mut().map(|t| t.data_mut());
        let mut gb_d = gb.as_mut().map(|t| t.data_mut());
        for_each_index(a.shape(), b.shape(), g.shape(), |o, ia, ib| {
            let go = gd[o];
            match kind {
                BinaryKind::Add => {
                    if let Some(d) = ga_d.as_deref_mut() {
                        d[ia] = d[ia] + go;
                    }
                    if let Some(d) = gb_d.as_deref_mut() {
                        d[ib] = d[ib] + go;
                    }
                }
                BinaryKind::Mul => {
                    if let Some(d) = ga_d.as_deref_mut() {
                        d[ia] = d[ia] + go * bd[ib];
                    }
                    if let Some(d) = gb_d.as_deref_mut() {
                        d[ib] = d[ib] + go * ad[ia];
                    }
                }
            }
        })?;
    }
    Ok((ga, gb))
}

pub(crate) fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub(crate) fn relu_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
}

/// Logistic function, kept strictly inside (0, 1) at the element type's resolution.
pub(crate) fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon() / T::of(2.0);
    x.map(|v| {
        let s = if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
        s.max(lo).min(hi)
    })
}

pub(crate) fn sigmoid_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(g.data())
        .map(|(&s, &gv)| gv * s * (T::one() - s))
        .collect();
    Tensor::from_vec(y.shape().to_vec(), data).expect("same shape")
}
