use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Pixel counts of one binarised prediction against its mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&self, o: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Counts with the prediction binarised as `p >= threshold`.
pub fn confusion(pred: &[f64], target: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if pred.len() != target.len() {
        return Err(CoreError::Precondition(format!(
            "prediction has {} pixels, target {}",
            pred.len(),
            target.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CoreError::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(target) {
        match (p >= threshold, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `num / den`, or the empty-class convention when `den = 0`: 1 if the
/// prediction also has nothing of that class (`other_empty`), else 0.
fn ratio(num: u64, den: u64, other_empty: bool) -> f64 {
    if den == 0 {
        if other_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn dsc(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, true)
}

pub fn iou_fg(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp + c.fn_, true)
}

pub fn iou_bg(c: &ConfusionCounts) -> f64 {
    ratio(c.tn, c.tn + c.fp + c.fn_, true)
}

/// Mean of foreground and background IoU.
pub fn miou(c: &ConfusionCounts) -> f64 {
    0.5 * (iou_fg(c) + iou_bg(c))
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_, c.fp == 0)
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp, c.fn_ == 0)
}
