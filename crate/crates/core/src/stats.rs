//! Per-class counts, frequencies and the head/middle/tail partition.

use crate::error::{Error, Result};

/// Frequency tier of a class, relative to the other classes of its dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tier {
    Head,
    Middle,
    Tail,
}

impl Tier {
    pub fn name(self) -> &'static str {
        match self {
            Tier::Head => "head",
            Tier::Middle => "middle",
            Tier::Tail => "tail",
        }
    }
}

/// Class-level statistics of a categorical label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    counts: Vec<usize>,
    frequencies: Vec<f64>,
    /// Class indices sorted by count descending; equal counts keep the lower
    /// class index first.
    order: Vec<usize>,
    imbalance_ratio: f64,
    partition: Vec<Tier>,
}

impl ClassStats {
    /// Build statistics directly from per-class counts.
    /// Every class must have at least one sample.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyLabels);
        }
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass { class });
        }
        let n: usize = counts.iter().sum();
        let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();

        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

        let max = counts[order[0]] as f64;
        let min = counts[*order.last().unwrap()] as f64;
        let imbalance_ratio = max / min;

        let partition = partition_by_rank(&order, counts.len());

        Ok(Self {
            counts: counts.to_vec(),
            frequencies,
            order,
            imbalance_ratio,
            partition,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn count(&self, class: usize) -> usize {
        self.counts[class]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn frequency(&self, class: usize) -> f64 {
        self.frequencies[class]
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn imbalance_ratio(&self) -> f64 {
        self.imbalance_ratio
    }

    pub fn partition(&self) -> &[Tier] {
        &self.partition
    }

    pub fn tier(&self, class: usize) -> Tier {
        self.partition[class]
    }

    /// Classes carrying the given tier tag, ascending.
    pub fn classes_in_tier(&self, tier: Tier) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&k| self.partition[k] == tier)
            .collect()
    }

    /// True when all classes have the same count.
    pub fn is_balanced(&self) -> bool {
        self.counts.iter().all(|&c| c == self.counts[0])
    }
}

/// Count classes and compute statistics for labels in `0..num_classes`.
///
/// Errors on an empty label list, an out-of-range label, and on any class
/// with zero samples (named in the error).
pub fn build_class_stats(labels: &[usize], num_classes: usize) -> Result<ClassStats> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let mut counts = vec![0usize; num_classes];
    for (index, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                num_classes,
            });
        }
        counts[label] += 1;
    }
    ClassStats::from_counts(&counts)
}

/// Tag count-ranked classes as contiguous head/middle/tail thirds:
/// `ceil(K/3)` head, `ceil(K/3)` middle, remainder tail. Fewer than three
/// classes are all head.
fn partition_by_rank(order: &[usize], num_classes: usize) -> Vec<Tier> {
    let mut partition = vec![Tier::Head; num_classes];
    if num_classes < 3 {
        return partition;
    }
    let third = num_classes.div_ceil(3);
    for (rank, &class) in order.iter().enumerate() {
        partition[class] = if rank < third {
            Tier::Head
        } else if rank < 2 * third {
            Tier::Middle
        } else {
            Tier::Tail
        };
    }
    partition
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_class_example() {
        let mut labels = vec![0usize; 55];
        labels.extend(vec![1usize; 20]);
        let stats = build_class_stats(&labels, 2).unwrap();
        assert!((stats.imbalance_ratio() - 2.75).abs() < 1e-12);
        assert!((stats.frequency(0) - 55.0 / 75.0).abs() < 1e-12);
        assert!((stats.frequency(1) - 20.0 / 75.0).abs() < 1e-12);
        // Rounded values quoted for the same example.
        assert!((stats.frequency(0) - 0.7333).abs() < 5e-5);
        assert!((stats.frequency(1) - 0.2667).abs() < 5e-5);
        // K < 3: everything is head.
        assert_eq!(stats.partition(), &[Tier::Head, Tier::Head]);
    }

    #[test]
    fn balanced_counts_have_unit_ratio() {
        let stats = ClassStats::from_counts(&[10, 10, 10]).unwrap();
        assert_eq!(stats.imbalance_ratio(), 1.0);
        assert!(stats.is_balanced());
    }

    #[test]
    fn ten_class_ratio_is_max_over_min() {
        // A 10-class long tail whose max/min count ratio is 65.78 up to
        // count rounding: counts 6578 down to 100.
        let counts = [6578, 3500, 2200, 1500, 1000, 700, 450, 300, 180, 100];
        let stats = ClassStats::from_counts(&counts).unwrap();
        assert!((stats.imbalance_ratio() - 65.78).abs() < 1e-12);
    }

    #[test]
    fn zero_count_class_is_named() {
        let err = build_class_stats(&[0, 0, 2], 3).unwrap_err();
        match err {
            Error::EmptyClass { class } => assert_eq!(class, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_labels_error() {
        assert!(matches!(build_class_stats(&[], 2), Err(Error::EmptyLabels)));
    }

    #[test]
    fn partition_thirds() {
        // K=10: head and middle take ceil(10/3)=4 each, tail the last 2.
        let counts = [100, 90, 80, 70, 60, 50, 40, 30, 20, 10];
        let stats = ClassStats::from_counts(&counts).unwrap();
        let head = stats.classes_in_tier(Tier::Head);
        let middle = stats.classes_in_tier(Tier::Middle);
        let tail = stats.classes_in_tier(Tier::Tail);
        assert_eq!(head, vec![0, 1, 2, 3]);
        assert_eq!(middle, vec![4, 5, 6, 7]);
        assert_eq!(tail, vec![8, 9]);
    }

    #[test]
    fn order_tie_breaks_on_lower_index() {
        let stats = ClassStats::from_counts(&[5, 7, 5]).unwrap();
        assert_eq!(stats.order(), &[1, 0, 2]);
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut labels in proptest::collection::vec(0usize..4, 4..200)) {
            // Ensure every class appears.
            for k in 0..4 { labels.push(k); }
            let stats = build_class_stats(&labels, 4).unwrap();
            let mut reversed = labels.clone();
            reversed.reverse();
            let stats_rev = build_class_stats(&reversed, 4).unwrap();
            prop_assert_eq!(stats, stats_rev);
        }

        #[test]
        fn frequencies_sum_to_one(counts in proptest::collection::vec(1usize..500, 1..12)) {
            let stats = ClassStats::from_counts(&counts).unwrap();
            let total: f64 = stats.frequencies().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(stats.imbalance_ratio() >= 1.0);
            // Counts along `order` are non-increasing.
            for w in stats.order().windows(2) {
                prop_assert!(stats.count(w[0]) >= stats.count(w[1]));
            }
        }
    }
}
