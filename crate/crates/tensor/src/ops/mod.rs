//! Forward and backward kernels. The graph dispatches into these; they only
//! see plain tensors and slices.

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod pool;
pub(crate) mod shape;
pub mod upsample;
