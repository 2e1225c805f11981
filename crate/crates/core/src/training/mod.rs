//! Loss, augmentation and the optimisation loop.

mod augment;
mod history;
mod trainer;

use std::path::PathBuf;

use hfc_tensor::{Graph, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use augment::{augment, blur, flip, jitter, rotate, translate, AugmentConfig, AugmentProbabilities};
pub use history::{EpochRecord, HistoryLog};
pub use trainer::{load_resume_state, train, train_resume, ResumeState, TrainOutcome, BEST_FILE, HISTORY_FILE, LAST_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    #[default]
    ClassBalancedBce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Where `best.ckpt`, `last.ckpt` and `history.jsonl` go. Nothing is
    /// written when unset.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
    /// Probability clamp for the loss.
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Binarisation threshold for validation metrics.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_lr() -> f64 {
    2.0e-5
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    300
}
fn default_eps() -> f64 {
    1e-7
}
fn default_threshold() -> f64 {
    0.5
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            optimizer: OptimizerKind::Adam,
            loss: LossKind::ClassBalancedBce,
            augment: AugmentConfig::default(),
            seed,
            checkpoint_dir: None,
            early_stop_patience: None,
            eps: default_eps(),
            threshold: default_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(CoreError::Config(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(CoreError::Config("epochs must be at least 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(CoreError::Config(format!("eps must lie in (0, 0.5), got {}", self.eps)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CoreError::Config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        if self.early_stop_patience == Some(0) {
            return Err(CoreError::Config("early_stop_patience must be at least 1 when set".into()));
        }
        self.augment.validate()
    }
}

/// Class-balanced binary cross-entropy of a probability map against a 0/1
/// target. Returns the loss and the number of predictions clamped into
/// `[eps, 1 - eps]`.
pub fn class_balanced_bce<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<(f64, usize)> {
    bce_value(pred, target, true, eps)
}

pub fn bce<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<(f64, usize)> {
    bce_value(pred, target, false, eps)
}

fn bce_value<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, balanced: bool, eps: f64) -> Result<(f64, usize)> {
    let mut g = Graph::new();
    let p = g.input(pred.clone());
    let (loss, clamped) = g.bce(p, target, balanced, eps)?;
    Ok((g.value(loss).data()[0].as_f64(), clamped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(vec![1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let y = t(&[0.0, 1.0, 1.0, 0.0, 0.0]);
        let (l, clamped) = class_balanced_bce(&y, &y, 1e-7).unwrap();
        assert!(l <= 1e-6, "{l}");
        assert_eq!(clamped, 5);
    }

    #[test]
    fn half_everywhere_is_ln2() {
        for y in [[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 0.0, 1.0, 0.0]] {
            let (l, _) = class_balanced_bce(&t(&[0.5; 6]), &t(&y), 1e-7).unwrap();
            approx::assert_relative_eq!(l, std::f64::consts::LN_2, max_relative = 1e-6);
        }
    }

    #[test]
    fn balanced_target_matches_plain() {
        let p = t(&[0.2, 0.9, 0.6, 0.3]);
        let y = t(&[0.0, 1.0, 1.0, 0.0]);
        let (a, _) = class_balanced_bce(&p, &y, 1e-7).unwrap();
        let (b, _) = bce(&p, &y, 1e-7).unwrap();
        approx::assert_relative_eq!(a, b, max_relative = 1e-6);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::new(0).validate().is_ok());
        let mut c = TrainConfig::new(0);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let text = "seed = 3\nepochs = 2\n";
        let c: TrainConfig = toml::from_str(text).unwrap();
        assert_eq!((c.seed, c.epochs, c.batch_size), (3, 2, 32));
        assert_eq!(c.loss, LossKind::ClassBalancedBce);
    }
}
