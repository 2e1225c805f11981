//! Hierarchical feedback chain network for hippocampus segmentation: model
//! components, training loop, data pipeline and evaluation.

pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod fafc;
pub mod fha;
pub mod gpa;
pub mod layers;
pub mod network;
pub mod training;

pub use checkpoint::Checkpoint;
pub use error::{CoreError, Result};
pub use fafc::{ChainState, ConnectionMode, Encoder, EncoderConfig};
pub use fha::{Fha, MaskOverride};
pub use gpa::{Gpa, GpaMode, PairFuse, PairOverride};
pub use network::{build_model, Model, ModelConfig, ModelOutput, Variant};
