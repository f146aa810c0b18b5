//! Confusion matrices over categorical predictions.

use crate::error::{Error, Result};
use crate::stats::ClassStats;

/// K x K matrix of (true class, predicted class) counts.
/// Entry `(j, k)` is the number of samples with true class `j` predicted as `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    num_classes: usize,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: vec![0; num_classes * num_classes],
            num_classes,
        }
    }

    /// Build from raw count rows. Rows must all have length `len(rows)`.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::EmptyInput);
        }
        let mut counts = Vec::with_capacity(k * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::LengthMismatch {
                    left: k,
                    right: row.len(),
                });
            }
            counts.extend_from_slice(row);
        }
        Ok(Self {
            counts,
            num_classes: k,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.num_classes + predicted]
    }

    pub fn add(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class * self.num_classes + predicted] += 1;
    }

    /// Number of samples with true class `j`.
    pub fn row_sum(&self, j: usize) -> u64 {
        (0..self.num_classes).map(|k| self.get(j, k)).sum()
    }

    /// Number of samples predicted as class `k`.
    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.num_classes).map(|j| self.get(j, k)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|k| self.get(k, k)).sum()
    }

    /// Per-class true-sample counts, i.e. the row sums.
    pub fn true_counts(&self) -> Vec<u64> {
        (0..self.num_classes).map(|j| self.row_sum(j)).collect()
    }

    /// Class statistics of the evaluated set's true labels.
    pub fn truth_stats(&self) -> Result<ClassStats> {
        let counts: Vec<usize> = self.true_counts().iter().map(|&c| c as usize).collect();
        ClassStats::from_counts(&counts)
    }

    /// Copy with row `j` multiplied by an integer factor, simulating an
    /// m-fold replication of class `j`'s test samples.
    pub fn replicate_row(&self, j: usize, factor: u64) -> Self {
        let mut out = self.clone();
        for k in 0..self.num_classes {
            out.counts[j * self.num_classes + k] = self.get(j, k) * factor;
        }
        out
    }
}

/// Count (true, predicted) pairs into a K x K matrix.
///
/// Errors on unequal lengths, an empty input, and any label outside
/// `0..num_classes` (reported with its sample index).
pub fn confusion_from_predictions(
    truth: &[usize],
    predicted: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (index, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
        if t >= num_classes {
            return Err(Error::LabelOutOfRange {
                index,
                label: t,
                num_classes,
            });
        }
        if p >= num_classes {
            return Err(Error::LabelOutOfRange {
                index,
                label: p,
                num_classes,
            });
        }
        cm.add(t, p);
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::build_class_stats;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let cm = confusion_from_predictions(&[0, 1], &[0, 1], 2).unwrap();
        assert_eq!(cm.get(0, 0), 1);
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.get(0, 1), 0);
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn counts_pairs() {
        let cm = confusion_from_predictions(&[0, 0, 1], &[1, 1, 1], 2).unwrap();
        assert_eq!(cm.get(0, 0), 0);
        assert_eq!(cm.get(0, 1), 2);
        assert_eq!(cm.get(1, 0), 0);
        assert_eq!(cm.get(1, 1), 1);
    }

    #[test]
    fn empty_input_errors() {
        assert!(matches!(
            confusion_from_predictions(&[], &[], 2),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn out_of_range_label_reports_index() {
        let err = confusion_from_predictions(&[0, 3], &[0, 0], 2).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { index: 1, .. }));
    }

    proptest! {
        #[test]
        fn row_sums_match_class_counts(
            truth in proptest::collection::vec(0usize..5, 1..300),
            predicted_seed in any::<u64>(),
        ) {
            let predicted: Vec<usize> =
                truth.iter().enumerate().map(|(i, _)| ((predicted_seed as usize).wrapping_add(i * 7)) % 5).collect();
            let cm = confusion_from_predictions(&truth, &predicted, 5).unwrap();
            // Classes missing from `truth` would fail stats construction;
            // compare raw counts instead.
            let mut counts = vec![0u64; 5];
            for &t in &truth { counts[t] += 1; }
            prop_assert_eq!(cm.true_counts(), counts.clone());
            prop_assert_eq!(cm.total() as usize, truth.len());
            if counts.iter().all(|&c| c > 0) {
                let stats = build_class_stats(&truth, 5).unwrap();
                let from_cm: Vec<usize> = cm.true_counts().iter().map(|&c| c as usize).collect();
                prop_assert_eq!(stats.counts(), &from_cm[..]);
            }
        }
    }
}
