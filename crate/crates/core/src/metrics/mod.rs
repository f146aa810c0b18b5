//! Evaluation metrics: balanced (label-shift-invariant) metrics, the
//! classical classification report, ranking metrics, and regression metrics.

mod balanced;
pub(crate) mod classification;
mod ranking;
pub(crate) mod regression;
mod report;

pub use balanced::{
    balanced_accuracy, balanced_f1, balanced_precision, balanced_precisions, per_class_recall,
};
pub use classification::{
    accuracy, classification_report, cohen_kappa, macro_f1, matthews_corrcoef, micro_f1,
    per_class_f1, per_class_precision, subset_breakdown, weighted_f1, SubsetMetric,
};
pub use ranking::{auprc, auroc, binary_auprc, binary_auroc};
pub use regression::regression_metrics;
pub use report::{format_json_f64, MetricReport, ReportMeta};
