use std::fmt::Write as _;
use std::path::Path;

use hfc_tensor::{ParamStore, Real};
use serde::{Deserialize, Serialize};

use super::metrics::{confusion, dsc, iou_bg, iou_fg, miou, precision, recall, ConfusionCounts};
use super::roc::{roc_auc, RocPoint};
use crate::checkpoint::write_atomic;
use crate::datasets::{batch_tensors, SegmentationSample};
use crate::error::{CoreError, Result};
use crate::network::Model;

pub const ACCURACY_NOTE: &str =
    "the `accuracy` field is precision (positive predictive value); tables that label this column accuracy report the same quantity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub is_noise: bool,
    pub dsc: f64,
    pub iou_fg: f64,
    pub iou_bg: f64,
    pub miou: f64,
    pub recall: f64,
    pub precision: f64,
    pub counts: ConfusionCounts,
}

impl SampleMetrics {
    pub fn from_counts(id: String, is_noise: bool, c: ConfusionCounts) -> Self {
        SampleMetrics {
            id,
            is_noise,
            dsc: dsc(&c),
            iou_fg: iou_fg(&c),
            iou_bg: iou_bg(&c),
            miou: miou(&c),
            recall: recall(&c),
            precision: precision(&c),
            counts: c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub dsc: f64,
    pub miou: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub samples: usize,
    /// Per-slice means.
    pub dsc: f64,
    pub iou_fg: f64,
    pub iou_bg: f64,
    pub miou: f64,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub accuracy_note: String,
    /// Metrics of the summed confusion counts over all pixels.
    pub pooled: Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_sample: Vec<SampleMetrics>,
    pub aggregate: Option<Aggregate>,
    pub roc: Vec<RocPoint>,
    pub auc: Option<f64>,
    pub threshold_used: f64,
    pub notice: Option<String>,
}

impl MetricsReport {
    /// Builds the report from per-sample probability maps.
    pub fn from_predictions(samples: &[SegmentationSample], probs: &[Vec<f64>], threshold: f64) -> Result<Self> {
        if samples.len() != probs.len() {
            return Err(CoreError::Precondition(format!(
                "{} samples but {} predictions",
                samples.len(),
                probs.len()
            )));
        }
        let mut per_sample = Vec::with_capacity(samples.len());
        let mut pooled = ConfusionCounts::default();
        for (s, p) in samples.iter().zip(probs) {
            let c = confusion(p, &s.mask, threshold)?;
            pooled = pooled.merge(&c);
            per_sample.push(SampleMetrics::from_counts(s.id(), s.is_noise, c));
        }
        let mut notices = Vec::new();
        let aggregate = if per_sample.is_empty() {
            notices.push("split contains no samples".to_string());
            None
        } else {
            let n = per_sample.len() as f64;
            let mean = |f: fn(&SampleMetrics) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
            let prec = mean(|m| m.precision);
            Some(Aggregate {
                samples: per_sample.len(),
                dsc: mean(|m| m.dsc),
                iou_fg: mean(|m| m.iou_fg),
                iou_bg: mean(|m| m.iou_bg),
                miou: mean(|m| m.miou),
                recall: mean(|m| m.recall),
                precision: prec,
                accuracy: prec,
                accuracy_note: ACCURACY_NOTE.to_string(),
                pooled: Pooled {
                    dsc: dsc(&pooled),
                    miou: miou(&pooled),
                    recall: recall(&pooled),
                    precision: precision(&pooled),
                },
            })
        };
        let scores: Vec<f64> = probs.iter().flatten().copied().collect();
        let targets: Vec<bool> = samples.iter().flat_map(|s| s.mask.iter().map(|&m| m != 0)).collect();
        let (roc, auc) = match roc_auc(&scores, &targets) {
            Ok((roc, auc)) => (roc, Some(auc)),
            Err(CoreError::Data(msg)) => {
                if !samples.is_empty() {
                    notices.push(format!("ROC/AUC not computed: {msg}"));
                }
                (Vec::new(), None)
            }
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            per_sample,
            aggregate,
            roc,
            auc,
            threshold_used: threshold,
            notice: (!notices.is_empty()).then(|| notices.join("; ")),
        })
    }

    /// One JSON record per sample, then one aggregate record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.per_sample {
            let mut v = serde_json::to_value(m).expect("plain data");
            v["record"] = "sample".into();
            writeln!(out, "{v}").expect("string write");
        }
        let agg = serde_json::json!({
            "record": "aggregate",
            "aggregate": self.aggregate,
            "auc": self.auc,
            "threshold_used": self.threshold_used,
            "notice": self.notice,
        });
        writeln!(out, "{agg}").expect("string write");
        out
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.roc {
            writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold).expect("string write");
        }
        out
    }

    pub fn write(&self, report_path: &Path, roc_path: &Path) -> Result<()> {
        write_atomic(report_path, self.to_jsonl().as_bytes())?;
        write_atomic(roc_path, self.roc_csv().as_bytes())
    }
}

/// Probability maps for every sample, computed in batches.
pub fn predict_samples<T: Real>(
    model: &Model,
    params: &ParamStore<T>,
    samples: &[SegmentationSample],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SegmentationSample> = chunk.iter().collect();
        let (x, _) = batch_tensors::<T>(&refs)?;
        let prob = model.predict(params, &x)?;
        let per = prob.numel() / chunk.len();
        out.extend(prob.data().chunks(per).map(|c| c.iter().map(|v| v.as_f64()).collect()));
    }
    Ok(out)
}

pub fn evaluate<T: Real>(
    model: &Model,
    params: &ParamStore<T>,
    samples: &[SegmentationSample],
    threshold: f64,
    batch_size: usize,
) -> Result<MetricsReport> {
    let probs = predict_samples(model, params, samples, batch_size)?;
    MetricsReport::from_predictions(samples, &probs, threshold)
}
