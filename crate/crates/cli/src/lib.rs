//! Library side of the `hfcnet` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use config::{config_hash, ModelSection, RunConfig};
pub use error::{CliError, Result};
pub use manifest::{RunManifest, RUN_MANIFEST_FILE};
