use crate::error::{Result, TensorError};
use crate::real::{gemm, MatView, Real};
use crate::tensor::Tensor;

fn dims3<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[b, r, c] => Ok((b, r, c)),
        s => Err(TensorError::Rank {
            op,
            expected: 3,
            shape: s.to_vec(),
        }),
    }
}

/// Views the `i`-th matrix of a `(batch, rows, cols)` tensor, optionally transposed.
fn view<T: Real>(t: &Tensor<T>, i: usize, trans: bool) -> MatView<'_, T> {
    let (_, r, c) = dims3(t, "matmul").expect("checked rank");
    let m = MatView::row_major(&t.data()[i * r * c..(i + 1) * r * c], r, c);
    if trans {
        m.t()
    } else {
        m
    }
}

/// Batched `op(a) @ op(b)` where `op` optionally transposes the last two axes.
pub(crate) fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let (ba, _, _) = dims3(a, "matmul")?;
    let (bb, _, _) = dims3(b, "matmul")?;
    if ba != bb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            axis: "batch",
            lhs: ba,
            rhs: bb,
        });
    }
    let (av, bv) = (view(a, 0, ta), view(b, 0, tb));
    if av.cols != bv.rows {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            axis: "inner",
            lhs: av.cols,
            rhs: bv.rows,
        });
    }
    let (m, n) = (av.rows, bv.cols);
    let mut out = Tensor::zeros(&[ba, m, n]);
    for i in 0..ba {
        gemm(
            T::one(),
            view(a, i, ta),
            view(b, i, tb),
            T::zero(),
            &mut out.data_mut()[i * m * n..(i + 1) * m * n],
        );
    }
    Ok(out)
}

pub(crate) fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    ta: bool,
    tb: bool,
    g: &Tensor<T>,
    need: (bool, bool),
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (batch, m, n) = dims3(g, "matmul")?;
    let mut da = need.0.then(|| Tensor::zeros(a.shape()));
    let mut db = need.1.then(|| Tensor::zeros(b.shape()));
    for i in 0..batch {
        let gv = MatView::row_major(&g.data()[i * m * n..(i + 1) * m * n], m, n);
        if let Some(da) = da.as_mut() {
            let (_, r, c) = dims3(a, "matmul")?;
            let dst = &mut da.data_mut()[i * r * c..(i + 1) * r * c];
            // d op(a) = g op(b)^T; store transposed back when `ta`.
            if ta {
                gemm(T::one(), view(b, i, tb), gv.t(), T::zero(), dst);
            } else {
                gemm(T::one(), gv, view(b, i, tb).t(), T::zero(), dst);
            }
        }
        if let Some(db) = db.as_mut() {
            let (_, r, c) = dims3(b, "matmul")?;
            let dst = &mut db.data_mut()[i * r * c..(i + 1) * r * c];
            // d op(b) = op(a)^T g
            if tb {
                gemm(T::one(), gv.t(), view(a, i, ta), T::zero(), dst);
            } else {
                gemm(T::one(), view(a, i, ta).t(), gv, T::zero(), dst);
            }
        }
    }
    Ok((da, db))
}

/// Swaps the last two axes of a `(batch, rows, cols)` tensor.
pub(crate) fn transpose<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, r, c) = dims3(x, "transpose")?;
    let xd = x.data();
    Ok(Tensor::from_fn(&[b, c, r], |idx| {
        let i = idx / (r * c);
        let (cc, rr) = ((idx / r) % c, idx % r);
        xd[(i * r + rr) * c + cc]
    }))
}
