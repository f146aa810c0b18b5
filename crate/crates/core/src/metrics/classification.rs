//! Classical confusion-matrix metrics and the head/middle/tail breakdown.

use log::warn;

use crate::confusion::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::metrics::balanced::balanced_precisions;
use crate::metrics::report::MetricReport;
use crate::stats::{ClassStats, Tier};

/// Fraction of correct predictions.
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    cm.trace() as f64 / cm.total() as f64
}

/// One-vs-all precision per class; a class nothing was predicted into scores 0.
pub fn per_class_precision(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.num_classes())
        .map(|k| {
            let col = cm.col_sum(k);
            if col == 0 {
                0.0
            } else {
                cm.get(k, k) as f64 / col as f64
            }
        })
        .collect()
}

fn per_class_recall_lenient(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.num_classes())
        .map(|j| {
            let row = cm.row_sum(j);
            if row == 0 {
                0.0
            } else {
                cm.get(j, j) as f64 / row as f64
            }
        })
        .collect()
}

/// One-vs-all F1 per class; zero when precision and recall are both zero.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    let precision = per_class_precision(cm);
    let recall = per_class_recall_lenient(cm);
    precision
        .iter()
        .zip(&recall)
        .map(|(p, r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        .collect()
}

/// Micro-averaged F1. For single-label multi-class data this equals accuracy.
pub fn micro_f1(cm: &ConfusionMatrix) -> f64 {
    let tp = cm.trace() as f64;
    let total = cm.total() as f64;
    // Micro precision and recall are both tp/total; their harmonic mean too.
    tp / total
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let f1 = per_class_f1(cm);
    f1.iter().sum::<f64>() / f1.len() as f64
}

/// Per-class F1 weighted by class support.
pub fn weighted_f1(cm: &ConfusionMatrix) -> f64 {
    let f1 = per_class_f1(cm);
    let total = cm.total() as f64;
    f1.iter()
        .enumerate()
        .map(|(k, v)| v * cm.row_sum(k) as f64 / total)
        .sum()
}

/// Cohen's kappa: `(p_o - p_e) / (1 - p_e)` with `p_e` estimated from the
/// marginal class distributions of both annotators.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total() as f64;
    let p_o = accuracy(cm);
    let p_e: f64 = (0..cm.num_classes())
        .map(|k| (cm.row_sum(k) as f64 / total) * (cm.col_sum(k) as f64 / total))
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        // Both marginals concentrated on one class: perfect trivial agreement.
        return if p_o > 1.0 - 1e-15 { 1.0 } else { 0.0 };
    }
    (p_o - p_e) / (1.0 - p_e)
}

/// Multi-class Matthews correlation coefficient in the covariance form over
/// the full confusion matrix.
pub fn matthews_corrcoef(cm: &ConfusionMatrix) -> f64 {
    let s = cm.total() as f64;
    let c = cm.trace() as f64;
    let k = cm.num_classes();
    let mut sum_tp = 0.0; // sum_k t_k * p_k
    let mut sum_t2 = 0.0;
    let mut sum_p2 = 0.0;
    for class in 0..k {
        let t = cm.row_sum(class) as f64;
        let p = cm.col_sum(class) as f64;
        sum_tp += t * p;
        sum_t2 += t * t;
        sum_p2 += p * p;
    }
    let denom = ((s * s - sum_p2) * (s * s - sum_t2)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (c * s - sum_tp) / denom
}

/// Full classical report: accuracy, per-class precision/recall/F1,
/// micro/macro/weighted F1, Cohen's kappa and the multi-class MCC.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<MetricReport> {
    if cm.total() == 0 {
        return Err(Error::EmptyInput);
    }
    let mut report = MetricReport::new();
    report.insert("accuracy", accuracy(cm));
    report.insert("micro_f1", micro_f1(cm));
    report.insert("macro_f1", macro_f1(cm));
    report.insert("weighted_f1", weighted_f1(cm));
    report.insert("kappa", cohen_kappa(cm));
    report.insert("mcc", matthews_corrcoef(cm));
    let precision = per_class_precision(cm);
    let recall = per_class_recall_lenient(cm);
    let f1 = per_class_f1(cm);
    for k in 0..cm.num_classes() {
        report.insert(format!("precision_{k}"), precision[k]);
        report.insert(format!("recall_{k}"), recall[k]);
        report.insert(format!("f1_{k}"), f1[k]);
    }
    Ok(report)
}

/// A metric that decomposes into per-class terms and can therefore be
/// restricted to a subset of true-label classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetMetric {
    BalancedAccuracy,
    BalancedF1,
    MacroF1,
    Accuracy,
}

impl SubsetMetric {
    pub fn name(self) -> &'static str {
        match self {
            SubsetMetric::BalancedAccuracy => "balanced_accuracy",
            SubsetMetric::BalancedF1 => "balanced_f1",
            SubsetMetric::MacroF1 => "macro_f1",
            SubsetMetric::Accuracy => "accuracy",
        }
    }
}

/// Recompute `metric` restricted to the true-label classes of each frequency
/// tier, averaging that metric's per-class terms over the tier only.
///
/// `partition_stats` supplies the head/middle/tail tags (typically built from
/// the training distribution); the balanced-precision frequency ratios are
/// still taken from the evaluated matrix itself. Tiers without classes or
/// without true samples are omitted with a warning.
pub fn subset_breakdown(
    cm: &ConfusionMatrix,
    partition_stats: &ClassStats,
    metric: SubsetMetric,
) -> Result<MetricReport> {
    if partition_stats.num_classes() != cm.num_classes() {
        return Err(Error::StatsDimensionMismatch {
            stats: partition_stats.num_classes(),
            matrix: cm.num_classes(),
        });
    }
    let mut report = MetricReport::new();
    for tier in [Tier::Head, Tier::Middle, Tier::Tail] {
        let classes = partition_stats.classes_in_tier(tier);
        match subset_metric_value(cm, &classes, metric)? {
            Some(value) => {
                let mut sub = MetricReport::new();
                sub.insert(metric.name(), value);
                sub.insert("class_count", classes.len() as f64);
                report.set_subset(tier.name(), sub);
            }
            None => warn!(
                "subset {:?} omitted from {} breakdown: no classes with true samples",
                tier.name(),
                metric.name()
            ),
        }
    }
    let all: Vec<usize> = (0..cm.num_classes()).collect();
    if let Some(value) = subset_metric_value(cm, &all, metric)? {
        let mut overall = MetricReport::new();
        overall.insert(metric.name(), value);
        overall.insert("class_count", all.len() as f64);
        report.set_subset("overall", overall);
    }
    Ok(report)
}

/// Metric restricted to the given true-label classes, or `None` when the
/// subset is empty or entirely without true samples.
pub(crate) fn subset_metric_value(
    cm: &ConfusionMatrix,
    classes: &[usize],
    metric: SubsetMetric,
) -> Result<Option<f64>> {
    let supported: Vec<usize> = classes
        .iter()
        .copied()
        .filter(|&k| cm.row_sum(k) > 0)
        .collect();
    if supported.is_empty() {
        return Ok(None);
    }
    let value = match metric {
        SubsetMetric::BalancedAccuracy => {
            let terms: Vec<f64> = supported
                .iter()
                .map(|&k| cm.get(k, k) as f64 / cm.row_sum(k) as f64)
                .collect();
            terms.iter().sum::<f64>() / terms.len() as f64
        }
        SubsetMetric::BalancedF1 => {
            let eval_stats = lenient_truth_stats(cm)?;
            let precisions = balanced_precisions(cm, &eval_stats)?;
            let mut total = 0.0;
            for &k in &supported {
                let rec = cm.get(k, k) as f64 / cm.row_sum(k) as f64;
                let bp = precisions[k];
                if rec + bp > 0.0 {
                    total += 2.0 * rec * bp / (rec + bp);
                }
            }
            total / supported.len() as f64
        }
        SubsetMetric::MacroF1 => {
            let f1 = per_class_f1(cm);
            supported.iter().map(|&k| f1[k]).sum::<f64>() / supported.len() as f64
        }
        SubsetMetric::Accuracy => {
            let correct: u64 = supported.iter().map(|&k| cm.get(k, k)).sum();
            let total: u64 = supported.iter().map(|&k| cm.row_sum(k)).sum();
            correct as f64 / total as f64
        }
    };
    Ok(Some(value))
}

/// Truth stats tolerating classes without true samples (their count is set to
/// 1 so frequency ratios stay finite; such classes contribute no
/// false-positive mass anyway).
fn lenient_truth_stats(cm: &ConfusionMatrix) -> Result<ClassStats> {
    let counts: Vec<usize> = cm
        .true_counts()
        .iter()
        .map(|&c| (c as usize).max(1))
        .collect();
    ClassStats::from_counts(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::balanced::balanced_accuracy;
    use crate::stats::build_class_stats;

    fn cm_90_10() -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&[vec![80, 10], vec![5, 5]]).unwrap()
    }

    #[test]
    fn diagonal_matrix_is_perfect() {
        let cm = ConfusionMatrix::from_rows(&[vec![4, 0], vec![0, 6]]).unwrap();
        assert_eq!(accuracy(&cm), 1.0);
        assert_eq!(micro_f1(&cm), 1.0);
        assert_eq!(macro_f1(&cm), 1.0);
        assert_eq!(weighted_f1(&cm), 1.0);
        assert_eq!(cohen_kappa(&cm), 1.0);
        assert_eq!(matthews_corrcoef(&cm), 1.0);
    }

    #[test]
    fn chance_predictions_have_zero_kappa() {
        // Rows proportional to the same predicted distribution: agreement is
        // exactly the chance level.
        let cm = ConfusionMatrix::from_rows(&[vec![30, 70], vec![15, 35]]).unwrap();
        assert!(cohen_kappa(&cm).abs() < 1e-12);
        assert!(matthews_corrcoef(&cm).abs() < 1e-12);
    }

    #[test]
    fn worked_binary_report() {
        let cm = cm_90_10();
        let report = classification_report(&cm).unwrap();
        assert_eq!(report.get("accuracy"), Some(0.85));
        // Vanilla precisions 80/85 and 5/15.
        let p1 = 80.0 / 85.0;
        let r1 = 80.0 / 90.0;
        let f1_1 = 2.0 * p1 * r1 / (p1 + r1);
        let p2 = 5.0 / 15.0;
        let r2 = 0.5;
        let f1_2 = 2.0 * p2 * r2 / (p2 + r2);
        let expected_macro = (f1_1 + f1_2) / 2.0;
        assert!((report.get("macro_f1").unwrap() - expected_macro).abs() < 1e-15);
        assert!((report.get("precision_0").unwrap() - p1).abs() < 1e-15);
        assert!((report.get("precision_1").unwrap() - p2).abs() < 1e-15);
    }

    #[test]
    fn plain_accuracy_changes_under_replication() {
        let cm = cm_90_10();
        let replicated = cm.replicate_row(1, 9);
        assert!((accuracy(&cm) - accuracy(&replicated)).abs() > 1e-3);
        assert!((weighted_f1(&cm) - weighted_f1(&replicated)).abs() > 1e-3);
    }

    #[test]
    fn breakdown_restricts_per_class_recall() {
        // Three classes, one per tier (counts 100 > 10 > 1), recalls 1, 0.5, 0.
        let cm = ConfusionMatrix::from_rows(&[
            vec![100, 0, 0],
            vec![5, 5, 0],
            vec![1, 0, 0],
        ])
        .unwrap();
        let stats = ClassStats::from_counts(&[100, 10, 1]).unwrap();
        let report = subset_breakdown(&cm, &stats, SubsetMetric::BalancedAccuracy).unwrap();
        assert_eq!(
            report.subset("head").unwrap().get("balanced_accuracy"),
            Some(1.0)
        );
        assert_eq!(
            report.subset("middle").unwrap().get("balanced_accuracy"),
            Some(0.5)
        );
        assert_eq!(
            report.subset("tail").unwrap().get("balanced_accuracy"),
            Some(0.0)
        );
    }

    #[test]
    fn overall_ba_is_count_weighted_subset_mean() {
        let truth: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let pred: Vec<usize> = truth.iter().map(|&t| if t < 3 { t } else { 0 }).collect();
        let cm = crate::confusion::confusion_from_predictions(&truth, &pred, 6).unwrap();
        let stats = build_class_stats(&truth, 6).unwrap();
        let report = subset_breakdown(&cm, &stats, SubsetMetric::BalancedAccuracy).unwrap();
        let mut weighted = 0.0;
        let mut classes = 0.0;
        for tier in ["head", "middle", "tail"] {
            let sub = report.subset(tier).unwrap();
            let count = sub.get("class_count").unwrap();
            weighted += sub.get("balanced_accuracy").unwrap() * count;
            classes += count;
        }
        let overall = balanced_accuracy(&cm).unwrap();
        assert!((weighted / classes - overall).abs() < 1e-12);
    }

    #[test]
    fn small_k_breakdown_equals_unrestricted() {
        // K < 3: everything is head, so the head entry equals the full metric.
        let cm = cm_90_10();
        let stats = ClassStats::from_counts(&[90, 10]).unwrap();
        let report = subset_breakdown(&cm, &stats, SubsetMetric::BalancedAccuracy).unwrap();
        assert_eq!(
            report.subset("head").unwrap().get("balanced_accuracy"),
            Some(balanced_accuracy(&cm).unwrap())
        );
        assert!(report.subset("middle").is_none());
        assert!(report.subset("tail").is_none());
    }
}
