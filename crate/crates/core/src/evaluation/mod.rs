//! Overlap metrics, ROC analysis, reports and activation maps.

mod cam;
mod metrics;
mod png;
mod report;
mod roc;

pub use cam::{cam, cam_from_feature, Heatmap};
pub use metrics::{confusion, dsc, iou_bg, iou_fg, miou, precision, recall, ConfusionCounts};
pub use png::{render_panel, write_panel};
pub use report::{evaluate, predict_samples, Aggregate, MetricsReport, Pooled, SampleMetrics, ACCURACY_NOTE};
pub use roc::{roc_auc, RocPoint};
