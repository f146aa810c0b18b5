//! Threshold-free ranking metrics: AUROC and AUPRC.

use log::warn;
use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Rank-statistic AUROC with ties counted as half: the probability that a
/// random positive outscores a random negative.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::NoScorableClass { metric: "auroc" });
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Area under the precision-recall curve by step-wise integration over every
/// distinct score threshold (no interpolation).
pub fn binary_auprc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == positive.len() {
        return Err(Error::NoScorableClass { metric: "auprc" });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut area = 0.0;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        // Consume the whole tie group: one threshold per distinct score.
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// One-vs-rest macro-averaged AUROC over the columns of an `n x K` score
/// matrix. Classes without both positives and negatives are skipped with a
/// warning; if every class is skipped, this is an error.
pub fn auroc(scores: ArrayView2<'_, f64>, truth: &[usize]) -> Result<f64> {
    macro_one_vs_rest(scores, truth, "auroc", binary_auroc)
}

/// One-vs-rest macro-averaged AUPRC; skipping rules as for [`auroc`].
pub fn auprc(scores: ArrayView2<'_, f64>, truth: &[usize]) -> Result<f64> {
    macro_one_vs_rest(scores, truth, "auprc", binary_auprc)
}

fn macro_one_vs_rest(
    scores: ArrayView2<'_, f64>,
    truth: &[usize],
    metric: &'static str,
    binary: impl Fn(&[f64], &[bool]) -> Result<f64>,
) -> Result<f64> {
    if scores.nrows() != truth.len() {
        return Err(Error::LengthMismatch {
            left: scores.nrows(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let k = scores.ncols();
    let mut values = Vec::new();
    for class in 0..k {
        let positive: Vec<bool> = truth.iter().map(|&t| t == class).collect();
        let n_pos = positive.iter().filter(|&&p| p).count();
        if n_pos == 0 || n_pos == positive.len() {
            warn!("{metric}: class {class} skipped (needs positives and negatives)");
            continue;
        }
        let column: Vec<f64> = scores.column(class).to_vec();
        values.push(binary(&column, &positive)?);
    }
    if values.is_empty() {
        return Err(Error::NoScorableClass { metric });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Ranks (1-based), ties replaced by the mean rank of the tie group.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) share the mean of ranks i+1..=j.
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = mean_rank;
        }
        i = j;
    }
    ranks
}

pub(crate) use average_ranks as ranks_with_ties;

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    /// All positive-negative pairs, ties worth half a win.
    fn pairwise_auroc(scores: &[f64], positive: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &pi) in positive.iter().enumerate() {
            if !pi {
                continue;
            }
            for (j, &pj) in positive.iter().enumerate() {
                if pj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// Threshold sweep over every distinct score, stepwise area.
    fn sweep_auprc(scores: &[f64], positive: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let n_pos = positive.iter().filter(|&&p| p).count() as f64;
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for &t in &thresholds {
            let tp = scores
                .iter()
                .zip(positive)
                .filter(|&(&s, &p)| s >= t && p)
                .count() as f64;
            let fp = scores
                .iter()
                .zip(positive)
                .filter(|&(&s, &p)| s >= t && !p)
                .count() as f64;
            let recall = tp / n_pos;
            let precision = tp / (tp + fp);
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn perfect_separation_scores_one() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let positive = [false, false, true, true];
        assert_eq!(binary_auroc(&scores, &positive).unwrap(), 1.0);
        assert_eq!(binary_auprc(&scores, &positive).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_score_half() {
        let scores = [0.5, 0.5, 0.5, 0.5];
        let positive = [false, true, false, true];
        assert_eq!(binary_auroc(&scores, &positive).unwrap(), 0.5);
    }

    #[test]
    fn worked_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let positive = [false, false, true, true];
        let value = binary_auroc(&scores, &positive).unwrap();
        assert_eq!(value, pairwise_auroc(&scores, &positive));
        assert_eq!(value, 0.75);

        let ap = binary_auprc(&scores, &positive).unwrap();
        assert!((ap - sweep_auprc(&scores, &positive)).abs() < 1e-15);
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn no_positives_is_an_error() {
        let scores = [0.1, 0.2];
        let positive = [false, false];
        assert!(binary_auprc(&scores, &positive).is_err());
        assert!(binary_auroc(&scores, &positive).is_err());
    }

    #[test]
    fn multiclass_macro_average() {
        // Scores that perfectly separate three classes.
        let truth = vec![0, 1, 2, 0, 1, 2];
        let mut scores = Array2::zeros((6, 3));
        for (i, &t) in truth.iter().enumerate() {
            scores[(i, t)] = 1.0;
        }
        assert_eq!(auroc(scores.view(), &truth).unwrap(), 1.0);
        assert_eq!(auprc(scores.view(), &truth).unwrap(), 1.0);
    }

    #[test]
    fn unscorable_classes_are_skipped() {
        // Class 2 never occurs: skipped; remaining classes still score.
        let truth = vec![0, 0, 1, 1];
        let scores =
            Array2::from_shape_vec((4, 3), vec![0.9, 0.1, 0.0, 0.8, 0.2, 0.0, 0.1, 0.9, 0.0, 0.2, 0.8, 0.0])
                .unwrap();
        assert_eq!(auroc(scores.view(), &truth).unwrap(), 1.0);
        // Single class present: everything skipped.
        let truth_one = vec![0, 0];
        let scores_one = Array2::from_shape_vec((2, 1), vec![0.4, 0.6]).unwrap();
        assert!(matches!(
            auroc(scores_one.view(), &truth_one),
            Err(Error::NoScorableClass { .. })
        ));
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise_statistic(
            scores in proptest::collection::vec(0.0f64..1.0, 2..12),
            flags in proptest::collection::vec(any::<bool>(), 2..12),
        ) {
            let n = scores.len().min(flags.len());
            let scores = &scores[..n];
            // Quantize so score ties actually occur.
            let scores: Vec<f64> = scores.iter().map(|s| (s * 8.0).round() / 8.0).collect();
            let flags = &flags[..n];
            let n_pos = flags.iter().filter(|&&p| p).count();
            prop_assume!(n_pos > 0 && n_pos < n);
            let fast = binary_auroc(&scores, flags).unwrap();
            let brute = pairwise_auroc(&scores, flags);
            prop_assert!((fast - brute).abs() < 1e-12);
        }

        #[test]
        fn auprc_matches_threshold_sweep(
            scores in proptest::collection::vec(0.0f64..1.0, 2..12),
            flags in proptest::collection::vec(any::<bool>(), 2..12),
        ) {
            let n = scores.len().min(flags.len());
            let scores: Vec<f64> = scores[..n].iter().map(|s| (s * 8.0).round() / 8.0).collect();
            let flags = &flags[..n];
            let n_pos = flags.iter().filter(|&&p| p).count();
            prop_assume!(n_pos > 0 && n_pos < n);
            let fast = binary_auprc(&scores, flags).unwrap();
            let brute = sweep_auprc(&scores, flags);
            prop_assert!((fast - brute).abs() < 1e-12);
        }
    }
}
