//! Run configuration file (TOML).
//!
//! ```toml
//! [model]
//! variant = "full"
//! channels = [8, 16, 32]
//! depth = 3
//!
//! [train]
//! seed = 0
//! epochs = 50
//! learning_rate = 3e-4
//! batch_size = 8
//! ```

use std::path::Path;

use hfc_core::training::TrainConfig;
use hfc_core::{ModelConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    pub channels: Vec<usize>,
    pub depth: usize,
    #[serde(default = "default_max_scale")]
    pub gpa_max_scale: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_variant() -> Variant {
    Variant::Full
}

fn default_max_scale() -> usize {
    8
}

impl ModelSection {
    /// Model configuration for square inputs of side `size`.
    pub fn model_config(&self, size: usize) -> ModelConfig {
        let mut c = ModelConfig::full(&self.channels, self.depth, (size, size));
        c.gpa_max_scale = self.gpa_max_scale;
        c.seed = self.seed;
        self.variant.apply(&c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::User(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.model_config(64).validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Built-in configuration used when none is given.
    pub fn default_for(variant: Variant, seed: u64) -> Self {
        let mut train = TrainConfig::new(seed);
        train.epochs = 50;
        train.learning_rate = 3e-4;
        train.batch_size = 8;
        RunConfig {
            model: ModelSection {
                variant,
                channels: vec![8, 16, 32],
                depth: 3,
                gpa_max_scale: default_max_scale(),
                seed,
            },
            train,
        }
    }
}

/// SHA-256 of the canonical JSON form: object keys sorted, no whitespace.
/// Key order in the source therefore does not matter.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let v = serde_json::to_value(value).expect("config serialises");
    let text = serde_json::to_string(&v).expect("json value serialises");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
