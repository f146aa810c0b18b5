//! Balanced accuracy, balanced precision and balanced F1.
//!
//! Balanced accuracy is the mean per-class recall. Balanced precision for
//! class `k` rescales every cross-class false positive count by the label
//! frequency ratio `n_k / n_j` of the evaluated set, which makes it (and the
//! balanced F1 built from it) invariant to the label distribution of the test
//! set: replicating any class's samples leaves the values unchanged.

use crate::confusion::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::stats::ClassStats;

/// Per-class recall `cm(k,k) / rowsum(k)`. Errors if any class has no true
/// samples.
pub fn per_class_recall(cm: &ConfusionMatrix) -> Result<Vec<f64>> {
    let k = cm.num_classes();
    let mut recalls = Vec::with_capacity(k);
    for class in 0..k {
        let support = cm.row_sum(class);
        if support == 0 {
            return Err(Error::ClassWithoutSupport {
                class,
                metric: "recall",
            });
        }
        recalls.push(cm.get(class, class) as f64 / support as f64);
    }
    Ok(recalls)
}

/// Mean per-class recall.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let recalls = per_class_recall(cm)?;
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Balanced precision for class `k`:
/// `TP_k / (TP_k + sum_{j != k} (n_k / n_j) * cm(j, k))`.
///
/// The frequency ratios come from `stats`, which must describe the evaluated
/// set's true labels for the label-shift invariance to hold. With uniform
/// counts this is exactly the conventional one-vs-all precision.
///
/// Degenerate cases: a single-class matrix scores 1; a class nothing was
/// predicted into scores 0.
pub fn balanced_precision(cm: &ConfusionMatrix, stats: &ClassStats, k: usize) -> Result<f64> {
    if stats.num_classes() != cm.num_classes() {
        return Err(Error::StatsDimensionMismatch {
            stats: stats.num_classes(),
            matrix: cm.num_classes(),
        });
    }
    if cm.num_classes() == 1 {
        return Ok(1.0);
    }
    if cm.col_sum(k) == 0 {
        return Ok(0.0);
    }
    let tp = cm.get(k, k) as f64;
    let n_k = stats.count(k) as f64;
    // Each term is (count * n_k) / n_j: one product and one division per
    // term keeps the value bit-stable under integer replication of a class.
    let mut denom = tp;
    for j in 0..cm.num_classes() {
        if j == k {
            continue;
        }
        let fp = cm.get(j, k) as f64;
        if fp > 0.0 {
            denom += fp * n_k / stats.count(j) as f64;
        }
    }
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(tp / denom)
}

/// Balanced precision for every class.
pub fn balanced_precisions(cm: &ConfusionMatrix, stats: &ClassStats) -> Result<Vec<f64>> {
    (0..cm.num_classes())
        .map(|k| balanced_precision(cm, stats, k))
        .collect()
}

/// Mean per-class harmonic mean of recall and balanced precision.
/// A class with zero recall and zero balanced precision contributes 0.
pub fn balanced_f1(cm: &ConfusionMatrix, stats: &ClassStats) -> Result<f64> {
    let recalls = per_class_recall(cm)?;
    let precisions = balanced_precisions(cm, stats)?;
    let k = cm.num_classes() as f64;
    let mut total = 0.0;
    for (rec, bp) in recalls.iter().zip(&precisions) {
        if rec + bp > 0.0 {
            total += 2.0 * rec * bp / (rec + bp);
        }
    }
    Ok(total / k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confusion::confusion_from_predictions;
    use crate::metrics::classification::macro_f1;
    use proptest::prelude::*;

    fn cm_90_10() -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&[vec![80, 10], vec![5, 5]]).unwrap()
    }

    #[test]
    fn perfect_classifier_scores_one() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 0], vec![0, 7]]).unwrap();
        assert_eq!(balanced_accuracy(&cm).unwrap(), 1.0);
        let stats = cm.truth_stats().unwrap();
        assert_eq!(balanced_f1(&cm, &stats).unwrap(), 1.0);
    }

    #[test]
    fn always_majority_scores_one_over_k() {
        // Binary: everything predicted as class 0.
        let cm = ConfusionMatrix::from_rows(&[vec![90, 0], vec![10, 0]]).unwrap();
        assert_eq!(balanced_accuracy(&cm).unwrap(), 0.5);
        // K classes, everything predicted as the majority class 0.
        for k in [2usize, 10, 100] {
            let mut rows = vec![vec![0u64; k]; k];
            for (j, row) in rows.iter_mut().enumerate() {
                row[0] = if j == 0 { 100 } else { 3 };
            }
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            assert_eq!(balanced_accuracy(&cm).unwrap(), 1.0 / k as f64);
        }
    }

    #[test]
    fn worked_binary_example() {
        let cm = cm_90_10();
        let ba = balanced_accuracy(&cm).unwrap();
        assert!((ba - (80.0 / 90.0 + 5.0 / 10.0) / 2.0).abs() < 1e-15);
        assert!((ba - 0.694444).abs() < 1e-6);
    }

    #[test]
    fn balanced_precision_worked_example() {
        let cm = cm_90_10();
        let stats = cm.truth_stats().unwrap();
        let bp1 = balanced_precision(&cm, &stats, 1).unwrap();
        // 5 / (5 + (10/90) * 10) = 9/11
        assert!((bp1 - 9.0 / 11.0).abs() < 1e-15);
        assert!((bp1 - 0.818182).abs() < 1e-6);

        // Same conditional rates with class-0 rows doubled: unchanged.
        let doubled = cm.replicate_row(0, 2);
        let stats2 = doubled.truth_stats().unwrap();
        let bp1_doubled = balanced_precision(&doubled, &stats2, 1).unwrap();
        assert_eq!(bp1, bp1_doubled);
    }

    #[test]
    fn balanced_f1_worked_example() {
        let cm = cm_90_10();
        let stats = cm.truth_stats().unwrap();
        let bf1 = balanced_f1(&cm, &stats).unwrap();
        assert!((bf1 - 0.682438).abs() < 1e-6);

        // Brute-force oracle: replicating class 1 nine-fold balances the set;
        // plain macro-F1 of the balanced matrix must match.
        let balanced = cm.replicate_row(1, 9);
        assert_eq!(balanced.row_sum(0), balanced.row_sum(1));
        let oracle = macro_f1(&balanced);
        assert!((bf1 - oracle).abs() < 1e-12);
    }

    #[test]
    fn missing_true_class_is_an_error() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![0, 0]]).unwrap();
        assert!(matches!(
            balanced_accuracy(&cm),
            Err(Error::ClassWithoutSupport { class: 1, .. })
        ));
    }

    #[test]
    fn uniform_counts_recover_vanilla_precision() {
        let truth = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        let pred = vec![0, 1, 2, 1, 1, 0, 2, 2, 1];
        let cm = confusion_from_predictions(&truth, &pred, 3).unwrap();
        let stats = cm.truth_stats().unwrap();
        for k in 0..3 {
            let bp = balanced_precision(&cm, &stats, k).unwrap();
            let col = cm.col_sum(k) as f64;
            let vanilla = if col == 0.0 {
                0.0
            } else {
                cm.get(k, k) as f64 / col
            };
            assert_eq!(bp, vanilla);
        }
    }

    fn arb_cm(k: usize) -> impl Strategy<Value = ConfusionMatrix> {
        proptest::collection::vec(proptest::collection::vec(0u64..40, k), k).prop_filter_map(
            "every class needs true samples",
            move |mut rows| {
                for row in rows.iter_mut() {
                    if row.iter().all(|&c| c == 0) {
                        row[0] = 1;
                    }
                }
                ConfusionMatrix::from_rows(&rows).ok()
            },
        )
    }

    proptest! {
        #[test]
        fn replication_leaves_balanced_metrics_unchanged(
            cm in arb_cm(4),
            class in 0usize..4,
            factor in prop_oneof![Just(2u64), Just(5), Just(10)],
        ) {
            let stats = cm.truth_stats().unwrap();
            let replicated = cm.replicate_row(class, factor);
            let stats_rep = replicated.truth_stats().unwrap();

            let ba = balanced_accuracy(&cm).unwrap();
            let ba_rep = balanced_accuracy(&replicated).unwrap();
            prop_assert!((ba - ba_rep).abs() < 1e-12);

            let bf1 = balanced_f1(&cm, &stats).unwrap();
            let bf1_rep = balanced_f1(&replicated, &stats_rep).unwrap();
            prop_assert!((bf1 - bf1_rep).abs() < 1e-12);
        }

        #[test]
        fn balanced_accuracy_is_bounded(cm in arb_cm(5)) {
            let ba = balanced_accuracy(&cm).unwrap();
            prop_assert!((0.0..=1.0).contains(&ba));
            let stats = cm.truth_stats().unwrap();
            let bf1 = balanced_f1(&cm, &stats).unwrap();
            prop_assert!((0.0..=1.0).contains(&bf1));
        }
    }
}
