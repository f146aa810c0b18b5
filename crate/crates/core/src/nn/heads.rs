//! Classifier-head utilities: class-dependent temperatures, a k-NN baseline,
//! and the centroid-based open-set head.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::stats::ClassStats;

/// Class-dependent temperatures `a_c = (n_max / n_c)^gamma`: rare classes get
/// larger temperatures, forcing larger decision values during training.
pub fn cdt_temperatures(stats: &ClassStats, gamma: f64) -> Result<Vec<f64>> {
    if gamma < 0.0 {
        return Err(Error::InvalidHyper {
            name: "gamma",
            value: gamma,
            requirement: "temperature exponent must be >= 0",
        });
    }
    let n_max = stats.count(stats.order()[0]) as f64;
    Ok(stats
        .counts()
        .iter()
        .map(|&n| (n_max / n as f64).powf(gamma))
        .collect())
}

/// Divide logits by their class temperatures. Used inside the training
/// softmax only; inference uses the raw logits.
pub fn cdt_logits(raw_logits: &[f64], temperatures: &[f64]) -> Result<Vec<f64>> {
    if raw_logits.len() != temperatures.len() {
        return Err(Error::DimensionMismatch {
            expected: raw_logits.len(),
            got: temperatures.len(),
        });
    }
    if let Some(&bad) = temperatures.iter().find(|&&a| a <= 0.0) {
        return Err(Error::InvalidHyper {
            name: "temperature",
            value: bad,
            requirement: "temperatures must be positive",
        });
    }
    Ok(raw_logits
        .iter()
        .zip(temperatures)
        .map(|(z, a)| z / a)
        .collect())
}

/// Majority vote among the k nearest training points (Euclidean). Vote ties
/// break toward the class with the smaller summed distance, then the lower
/// class index.
pub fn knn_predict(
    train_features: ArrayView2<'_, f64>,
    train_labels: &[usize],
    query: ArrayView1<'_, f64>,
    k: usize,
) -> Result<usize> {
    let n = train_features.nrows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if train_labels.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: train_labels.len(),
        });
    }
    if k < 1 || k > n {
        return Err(Error::InvalidHyper {
            name: "k",
            value: k as f64,
            requirement: "needs 1 <= k <= training size",
        });
    }
    let mut dists: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let d = train_features
                .row(i)
                .iter()
                .zip(query.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            (d, i)
        })
        .collect();
    dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let num_classes = train_labels.iter().max().unwrap() + 1;
    let mut votes = vec![0usize; num_classes];
    let mut summed_distance = vec![0.0f64; num_classes];
    for &(d, i) in dists.iter().take(k) {
        votes[train_labels[i]] += 1;
        summed_distance[train_labels[i]] += d;
    }
    let mut best = None;
    for class in 0..num_classes {
        if votes[class] == 0 {
            continue;
        }
        let candidate = (votes[class], summed_distance[class], class);
        best = match best {
            None => Some(candidate),
            Some((bv, bd, bc)) => {
                if candidate.0 > bv || (candidate.0 == bv && candidate.1 < bd) {
                    Some(candidate)
                } else {
                    Some((bv, bd, bc))
                }
            }
        };
    }
    Ok(best.expect("k >= 1 guarantees at least one vote").2)
}

/// Per-class feature centroids with a reachability threshold for open-set
/// decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenHead {
    /// Centroid per training class, `K x d`.
    pub centroids: Array2<f64>,
    /// Samples farther than this from every centroid are flagged open.
    pub threshold: f64,
}

/// Fit class centroids as the per-class means of the given feature vectors
/// and set the threshold at the `percentile`-th percentile (nearest-rank) of
/// the training reachabilities.
pub fn oltr_fit_centroids(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    num_classes: usize,
    percentile: f64,
) -> Result<OpenHead> {
    if features.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.nrows(),
            right: labels.len(),
        });
    }
    if features.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidHyper {
            name: "percentile",
            value: percentile,
            requirement: "must lie in [0, 100]",
        });
    }
    let d = features.ncols();
    let mut centroids = Array2::zeros((num_classes, d));
    let mut counts = vec![0usize; num_classes];
    for (row, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                index: row,
                label,
                num_classes,
            });
        }
        counts[label] += 1;
        let mut c = centroids.row_mut(label);
        c += &features.row(row);
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class });
    }
    for (class, &count) in counts.iter().enumerate() {
        let mut c = centroids.row_mut(class);
        c /= count as f64;
    }
    let mut head = OpenHead {
        centroids,
        threshold: f64::INFINITY,
    };
    let mut reach: Vec<f64> = (0..features.nrows())
        .map(|row| oltr_reachability(&head, features.row(row)))
        .collect();
    reach.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((percentile / 100.0 * reach.len() as f64).ceil() as usize).clamp(1, reach.len());
    head.threshold = reach[rank - 1];
    Ok(head)
}

/// Minimum Euclidean distance from the feature vector to any centroid.
pub fn oltr_reachability(head: &OpenHead, feature: ArrayView1<'_, f64>) -> f64 {
    (0..head.centroids.nrows())
        .map(|i| {
            head.centroids
                .row(i)
                .iter()
                .zip(feature.iter())
                .map(|(c, f)| (c - f) * (c - f))
                .sum::<f64>()
                .sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Open-set decision: beyond the reachability threshold the sample is the
/// open class `K`; otherwise the argmax of the closed logits (ties toward the
/// lower class index).
pub fn open_decision(
    head: &OpenHead,
    feature: ArrayView1<'_, f64>,
    closed_logits: &[f64],
) -> usize {
    if oltr_reachability(head, feature) > head.threshold {
        return closed_logits.len();
    }
    argmax(closed_logits)
}

/// First index of the maximum value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cdt_temperature_examples() {
        let stats = ClassStats::from_counts(&[100, 10]).unwrap();
        let temps = cdt_temperatures(&stats, 1.0).unwrap();
        assert_eq!(temps, vec![1.0, 10.0]);
        // gamma = 0: all ones.
        let flat = cdt_temperatures(&stats, 0.0).unwrap();
        assert_eq!(flat, vec![1.0, 1.0]);
        // Temperatures do not decrease as counts shrink.
        let stats = ClassStats::from_counts(&[100, 50, 10, 2]).unwrap();
        let temps = cdt_temperatures(&stats, 0.5).unwrap();
        for w in temps.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn cdt_logits_divide_elementwise() {
        let tempered = cdt_logits(&[2.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(tempered, vec![2.0, 1.0]);
        let identity = cdt_logits(&[0.4, -0.7], &[1.0, 1.0]).unwrap();
        assert_eq!(identity, vec![0.4, -0.7]);
        assert!(cdt_logits(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn cdt_can_change_the_argmax() {
        // Raw argmax is class 0; tempering flips it to the rare class 1.
        let raw = [2.0, 1.9];
        let temps = [2.0, 1.0];
        let tempered = cdt_logits(&raw, &temps).unwrap();
        assert_eq!(argmax(&raw), 0);
        assert_eq!(argmax(&tempered), 1);
    }

    #[test]
    fn knn_basic_votes() {
        let features = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]];
        let labels = vec![0, 0, 1, 1];
        // Query at a training point with k=1 returns its label.
        assert_eq!(
            knn_predict(features.view(), &labels, array![5.0, 5.0].view(), 1).unwrap(),
            1
        );
        // Two class-0 neighbors nearer than one class-1: class 0 wins at k=3.
        assert_eq!(
            knn_predict(features.view(), &labels, array![0.4, 0.1].view(), 3).unwrap(),
            0
        );
    }

    #[test]
    fn knn_tie_breaks() {
        // Equidistant neighbors, tied one-vs-one vote: lower class index wins
        // when summed distances tie too.
        let features = array![[1.0, 0.0], [-1.0, 0.0]];
        let labels = vec![1, 0];
        assert_eq!(
            knn_predict(features.view(), &labels, array![0.0, 0.0].view(), 2).unwrap(),
            0
        );
        // Smaller summed distance wins a tied vote.
        let features = array![[1.0, 0.0], [-2.0, 0.0]];
        let labels = vec![1, 0];
        assert_eq!(
            knn_predict(features.view(), &labels, array![0.0, 0.0].view(), 2).unwrap(),
            1
        );
    }

    #[test]
    fn knn_rejects_empty_and_bad_k() {
        let features = Array2::<f64>::zeros((0, 2));
        assert!(knn_predict(features.view(), &[], array![0.0, 0.0].view(), 1).is_err());
        let features = array![[0.0, 0.0]];
        assert!(knn_predict(features.view(), &[0], array![0.0, 0.0].view(), 2).is_err());
    }

    #[test]
    fn centroids_are_class_means() {
        let features = array![[1.0, 1.0], [3.0, 3.0], [-2.0, 0.0]];
        let labels = vec![0, 0, 1];
        let head = oltr_fit_centroids(features.view(), &labels, 2, 95.0).unwrap();
        assert_eq!(head.centroids.row(0).to_vec(), vec![2.0, 2.0]);
        assert_eq!(head.centroids.row(1).to_vec(), vec![-2.0, 0.0]);

        // Single sample per class: the centroid is the sample.
        let features = array![[4.0], [7.0]];
        let head = oltr_fit_centroids(features.view(), &[0, 1], 2, 95.0).unwrap();
        assert_eq!(head.centroids.row(0).to_vec(), vec![4.0]);

        // Symmetric vectors around the origin: centroid at the origin.
        let features = array![[1.0, 2.0], [-1.0, -2.0]];
        let head = oltr_fit_centroids(features.view(), &[0, 0], 1, 100.0).unwrap();
        assert_eq!(head.centroids.row(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn reachability_is_min_distance() {
        let head = OpenHead {
            centroids: array![[0.0, 0.0], [3.0, 4.0]],
            threshold: 1.0,
        };
        assert_eq!(oltr_reachability(&head, array![3.0, 0.0].view()), 3.0);
        assert_eq!(oltr_reachability(&head, array![0.0, 0.0].view()), 0.0);
        // Permuting centroids changes nothing.
        let permuted = OpenHead {
            centroids: array![[3.0, 4.0], [0.0, 0.0]],
            threshold: 1.0,
        };
        assert_eq!(oltr_reachability(&permuted, array![3.0, 0.0].view()), 3.0);
    }

    #[test]
    fn percentile_100_flags_no_training_sample() {
        let features = array![[0.0], [1.0], [10.0]];
        let labels = vec![0, 0, 1];
        let head = oltr_fit_centroids(features.view(), &labels, 2, 100.0).unwrap();
        for row in 0..features.nrows() {
            let reach = oltr_reachability(&head, features.row(row));
            assert!(reach <= head.threshold);
        }
    }

    #[test]
    fn open_decision_rules() {
        let head = OpenHead {
            centroids: array![[0.0, 0.0], [10.0, 0.0]],
            threshold: 2.0,
        };
        // At a centroid: never open.
        assert_eq!(
            open_decision(&head, array![0.0, 0.0].view(), &[0.2, 0.8]),
            1
        );
        // Far beyond the threshold: open class K = 2.
        assert_eq!(
            open_decision(&head, array![100.0, 100.0].view(), &[0.9, 0.1]),
            2
        );
        // Infinite threshold reduces to the closed argmax.
        let closed = OpenHead {
            centroids: head.centroids.clone(),
            threshold: f64::INFINITY,
        };
        assert_eq!(
            open_decision(&closed, array![100.0, 100.0].view(), &[0.9, 0.1]),
            0
        );
    }
}
