//! Dense tensors and a tape-based reverse-mode autodiff graph.
//!
//! The graph is rebuilt for every forward pass. Parameters live outside the
//! graph in a [`ParamStore`] and are registered as leaves by name, so the
//! gradients coming out of [`Graph::backward`] can be mapped straight back
//! onto the store and fed to an optimizer.

mod error;
mod graph;
mod ops;
mod optim;
mod params;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::upsample::bilinear_weights;
pub use optim::{Adam, AdamConfig, AdamState};
pub use params::ParamStore;
pub use real::{DType, Real};
pub use tensor::Tensor;
