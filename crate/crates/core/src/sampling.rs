//! Training-time re-balancing: class-aware index samplers, synthetic
//! minority oversampling, and instance combiners (mixup, remix, and the
//! dual-branch logit combiner).

use log::warn;
use ndarray::Array2;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::losses::stable_softmax;
use crate::rng::RngState;
use crate::stats::ClassStats;

/// Class distribution a sampler draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Class drawn with its empirical frequency (equivalent to a uniform
    /// sample over instances).
    InstanceBalanced,
    /// Every class equally likely.
    ClassBalanced,
    /// Linear interpolation from instance-balanced to class-balanced over the
    /// training epochs: `(1 - t/T) p_ib + (t/T) p_cb`.
    Progressive,
    /// Class drawn with the frequency of its mirror in the count-sorted
    /// order, so the rarest class is sampled like the most frequent one.
    Reversed,
}

/// Sampler plus its progress through training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    /// Current epoch, `0 ..= total_epochs`.
    pub epoch: usize,
    pub total_epochs: usize,
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind, epoch: usize, total_epochs: usize) -> Result<Self> {
        if total_epochs == 0 || epoch > total_epochs {
            return Err(Error::InvalidHyper {
                name: "epoch",
                value: epoch as f64,
                requirement: "needs 0 <= epoch <= total_epochs and total_epochs >= 1",
            });
        }
        Ok(Self {
            kind,
            epoch,
            total_epochs,
        })
    }
}

/// Probability of drawing each class under the spec.
pub fn class_distribution(spec: &SamplerSpec, stats: &ClassStats) -> Vec<f64> {
    let k = stats.num_classes();
    match spec.kind {
        SamplerKind::InstanceBalanced => stats.frequencies().to_vec(),
        SamplerKind::ClassBalanced => vec![1.0 / k as f64; k],
        SamplerKind::Progressive => {
            let t = spec.epoch as f64 / spec.total_epochs as f64;
            stats
                .frequencies()
                .iter()
                .map(|&pi| (1.0 - t) * pi + t / k as f64)
                .collect()
        }
        SamplerKind::Reversed => {
            let order = stats.order();
            let mut probs = vec![0.0; k];
            for (rank, &class) in order.iter().enumerate() {
                let mirror = order[k - 1 - rank];
                probs[class] = stats.frequency(mirror);
            }
            probs
        }
    }
}

/// Draw a batch of dataset indices: a class from the spec's distribution,
/// then a uniform instance of that class.
///
/// `class_indices[k]` lists the dataset indices of class `k`; a class with
/// positive probability but no instances is an error.
pub fn sample_batch(
    spec: &SamplerSpec,
    stats: &ClassStats,
    class_indices: &[Vec<usize>],
    batch: usize,
    rng: &mut RngState,
) -> Result<Vec<usize>> {
    if batch == 0 {
        return Err(Error::InvalidHyper {
            name: "batch",
            value: 0.0,
            requirement: "batch size must be at least 1",
        });
    }
    if class_indices.len() != stats.num_classes() {
        return Err(Error::StatsDimensionMismatch {
            stats: stats.num_classes(),
            matrix: class_indices.len(),
        });
    }
    let probs = class_distribution(spec, stats);
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let total = *cumulative.last().unwrap();

    let mut indices = Vec::with_capacity(batch);
    for _ in 0..batch {
        let draw = rng.uniform() * total;
        let class = cumulative
            .iter()
            .position(|&c| draw < c)
            .unwrap_or(probs.len() - 1);
        let members = &class_indices[class];
        if members.is_empty() {
            return Err(Error::EmptyClass { class });
        }
        indices.push(members[rng.index(members.len())]);
    }
    Ok(indices)
}

/// Synthetic minority oversampling: new points are drawn on the segment
/// between a class sample and one of its `k_neighbors` nearest same-class
/// neighbors. Classes already at or above their target are left alone;
/// classes with a single sample are skipped with a warning.
pub fn smote_oversample(
    dataset: &Dataset,
    stats: &ClassStats,
    k_neighbors: usize,
    target_counts: &[usize],
    rng: &mut RngState,
) -> Result<Dataset> {
    if k_neighbors < 1 {
        return Err(Error::InvalidHyper {
            name: "k_neighbors",
            value: k_neighbors as f64,
            requirement: "needs at least one neighbor",
        });
    }
    let (labels, num_classes) = dataset.categorical_labels()?;
    if target_counts.len() != num_classes {
        return Err(Error::LengthMismatch {
            left: num_classes,
            right: target_counts.len(),
        });
    }
    let mut class_members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &label) in labels.iter().enumerate() {
        class_members[label].push(i);
    }

    let d = dataset.dim();
    let mut synthetic_rows: Vec<Vec<f64>> = Vec::new();
    let mut synthetic_labels: Vec<usize> = Vec::new();
    let mut synthetic_parents: Vec<usize> = Vec::new();

    for class in 0..num_classes {
        let current = stats.count(class);
        let target = target_counts[class];
        if target < current {
            return Err(Error::InvalidResample(format!(
                "class {class}: target {target} is below the current count {current}"
            )));
        }
        if target == current {
            continue;
        }
        let members = &class_members[class];
        if members.len() < 2 {
            warn!("smote: class {class} has only {} sample(s); skipped", members.len());
            continue;
        }
        // Neighbor lists once per class; k capped at the class size.
        let k = k_neighbors.min(members.len() - 1);
        let neighbors: Vec<Vec<usize>> = members
            .iter()
            .map(|&i| {
                let mut dists: Vec<(f64, usize)> = members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (euclidean(dataset, i, j), j))
                    .collect();
                dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                dists.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect();

        for _ in 0..(target - current) {
            let base_pos = rng.index(members.len());
            let base = members[base_pos];
            let nn = neighbors[base_pos][rng.index(neighbors[base_pos].len())];
            let u = rng.uniform();
            let row: Vec<f64> = (0..d)
                .map(|c| {
                    let x = dataset.features()[(base, c)];
                    let x_nn = dataset.features()[(nn, c)];
                    x + u * (x_nn - x)
                })
                .collect();
            synthetic_rows.push(row);
            synthetic_labels.push(class);
            synthetic_parents.push(base);
        }
    }

    // Originals verbatim, synthetics appended.
    let n_new = dataset.len() + synthetic_rows.len();
    let mut features = Array2::zeros((n_new, d));
    for i in 0..dataset.len() {
        features.row_mut(i).assign(&dataset.feature_row(i));
    }
    for (offset, row) in synthetic_rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            features[(dataset.len() + offset, c)] = v;
        }
    }
    let mut all_labels = labels.to_vec();
    all_labels.extend(&synthetic_labels);
    let mut ids = dataset.ids().to_vec();
    ids.extend(
        synthetic_labels
            .iter()
            .enumerate()
            .map(|(i, class)| format!("smote-{class}-{i}")),
    );
    let group_keys = dataset.group_keys().map(|keys| {
        let mut all = keys.to_vec();
        all.extend(synthetic_parents.iter().map(|&p| keys[p].clone()));
        all
    });
    let timestamps = dataset.timestamps().map(|ts| {
        let mut all = ts.to_vec();
        all.extend(synthetic_parents.iter().map(|&p| ts[p]));
        all
    });
    Dataset::new(
        features,
        Labels::Categorical {
            values: all_labels,
            num_classes,
        },
        ids,
        group_keys,
        timestamps,
    )
}

fn euclidean(dataset: &Dataset, i: usize, j: usize) -> f64 {
    dataset
        .feature_row(i)
        .iter()
        .zip(dataset.feature_row(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Convex combination of two hidden vectors and their (soft) labels with
/// `lambda ~ Beta(alpha, alpha)`. Returns the mixed pair and the drawn lambda.
pub fn mixup_combine(
    h_i: &[f64],
    h_j: &[f64],
    y_i: &[f64],
    y_j: &[f64],
    alpha: f64,
    rng: &mut RngState,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if h_i.len() != h_j.len() {
        return Err(Error::DimensionMismatch {
            expected: h_i.len(),
            got: h_j.len(),
        });
    }
    if y_i.len() != y_j.len() {
        return Err(Error::DimensionMismatch {
            expected: y_i.len(),
            got: y_j.len(),
        });
    }
    let lambda = sample_beta(alpha, rng)?;
    let mixed_h = lerp(h_i, h_j, lambda);
    let mixed_y = lerp(y_i, y_j, lambda);
    Ok((mixed_h, mixed_y, lambda))
}

/// Mixup with the label weight biased toward the minority class: the label
/// factor snaps to 0 or 1 when the class counts differ by at least `kappa`
/// and the feature factor is below `tau` (resp. above `1 - tau`).
#[allow(clippy::too_many_arguments)]
pub fn remix_combine(
    h_i: &[f64],
    h_j: &[f64],
    y_i: &[f64],
    y_j: &[f64],
    n_i: usize,
    n_j: usize,
    alpha: f64,
    kappa: f64,
    tau: f64,
    rng: &mut RngState,
) -> Result<(Vec<f64>, Vec<f64>, (f64, f64))> {
    if h_i.len() != h_j.len() {
        return Err(Error::DimensionMismatch {
            expected: h_i.len(),
            got: h_j.len(),
        });
    }
    if n_i == 0 || n_j == 0 {
        return Err(Error::EmptyClass {
            class: if n_i == 0 { 0 } else { 1 },
        });
    }
    let lambda_x = sample_beta(alpha, rng)?;
    let lambda_y = remix_label_weight(lambda_x, n_i, n_j, kappa, tau);
    let mixed_h = lerp(h_i, h_j, lambda_x);
    let mixed_y = lerp(y_i, y_j, lambda_y);
    Ok((mixed_h, mixed_y, (lambda_x, lambda_y)))
}

/// The label mixing factor of remix.
pub fn remix_label_weight(lambda_x: f64, n_i: usize, n_j: usize, kappa: f64, tau: f64) -> f64 {
    let ratio_ij = n_i as f64 / n_j as f64;
    let ratio_ji = n_j as f64 / n_i as f64;
    if ratio_ij >= kappa && lambda_x < tau {
        0.0
    } else if ratio_ji >= kappa && 1.0 - lambda_x < tau {
        1.0
    } else {
        lambda_x
    }
}

/// Output of the dual-branch combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct BbnCombined {
    /// `beta * logits_c + (1 - beta) * logits_r`.
    pub logits: Vec<f64>,
    /// `beta * CE(p, y_c) + (1 - beta) * CE(p, y_r)` with `p = softmax(logits)`.
    pub loss: f64,
    /// Gradient of the loss with respect to the mixed logits.
    pub grad_logits: Vec<f64>,
}

/// Mix the conventional and re-balancing branch logits and form the weighted
/// two-label cross-entropy.
pub fn bbn_combine(
    logits_c: &[f64],
    logits_r: &[f64],
    y_c: usize,
    y_r: usize,
    beta: f64,
) -> Result<BbnCombined> {
    if logits_c.len() != logits_r.len() {
        return Err(Error::DimensionMismatch {
            expected: logits_c.len(),
            got: logits_r.len(),
        });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidHyper {
            name: "beta",
            value: beta,
            requirement: "branch trade-off must lie in [0, 1]",
        });
    }
    let k = logits_c.len();
    if y_c >= k || y_r >= k {
        return Err(Error::LabelOutOfRange {
            index: 0,
            label: y_c.max(y_r),
            num_classes: k,
        });
    }
    let logits: Vec<f64> = logits_c
        .iter()
        .zip(logits_r)
        .map(|(c, r)| beta * c + (1.0 - beta) * r)
        .collect();
    let p = stable_softmax(&logits);
    let loss = -beta * p[y_c].max(crate::losses::LOG_FLOOR).ln()
        - (1.0 - beta) * p[y_r].max(crate::losses::LOG_FLOOR).ln();
    let grad_logits: Vec<f64> = (0..k)
        .map(|j| {
            let d_c = if j == y_c { 1.0 } else { 0.0 };
            let d_r = if j == y_r { 1.0 } else { 0.0 };
            beta * (p[j] - d_c) + (1.0 - beta) * (p[j] - d_r)
        })
        .collect();
    Ok(BbnCombined {
        logits,
        loss,
        grad_logits,
    })
}

/// Branch trade-off schedule for the dual-branch combiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `1 - (t/T)^2`: starts at 1 (conventional branch) and decays to 0
    /// (re-balancing branch).
    ParabolicDecay,
}

impl BetaSchedule {
    pub fn beta(self, epoch: usize, total_epochs: usize) -> f64 {
        match self {
            BetaSchedule::ParabolicDecay => {
                let t = epoch as f64 / total_epochs.max(1) as f64;
                1.0 - t * t
            }
        }
    }
}

/// Instance combiner selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    None,
    Mixup,
    Remix,
    Bbn,
}

/// Combiner hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinerSpec {
    pub kind: CombinerKind,
    /// Beta-distribution parameter for the mixing factor.
    pub alpha: f64,
    /// Remix count-ratio threshold.
    pub kappa: f64,
    /// Remix mixing-factor threshold.
    pub tau: f64,
    pub bbn_schedule: BetaSchedule,
}

impl CombinerSpec {
    pub fn none() -> Self {
        Self::new(CombinerKind::None)
    }

    pub fn new(kind: CombinerKind) -> Self {
        Self {
            kind,
            alpha: 1.0,
            kappa: 3.0,
            tau: 0.5,
            bbn_schedule: BetaSchedule::ParabolicDecay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::InvalidHyper {
                name: "alpha",
                value: self.alpha,
                requirement: "beta-distribution parameter must be positive",
            });
        }
        if self.kappa < 1.0 {
            return Err(Error::InvalidHyper {
                name: "kappa",
                value: self.kappa,
                requirement: "remix count-ratio threshold must be >= 1",
            });
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidHyper {
                name: "tau",
                value: self.tau,
                requirement: "remix mixing threshold must lie in [0, 1]",
            });
        }
        Ok(())
    }
}

fn sample_beta(alpha: f64, rng: &mut RngState) -> Result<f64> {
    if alpha <= 0.0 {
        return Err(Error::InvalidHyper {
            name: "alpha",
            value: alpha,
            requirement: "beta-distribution parameter must be positive",
        });
    }
    let beta = Beta::new(alpha, alpha).map_err(|_| Error::InvalidHyper {
        name: "alpha",
        value: alpha,
        requirement: "beta-distribution parameter must be positive and finite",
    })?;
    Ok(beta.sample(rng))
}

fn lerp(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn stats_90_10() -> ClassStats {
        ClassStats::from_counts(&[90, 10]).unwrap()
    }

    #[test]
    fn progressive_interpolates_between_samplers() {
        let stats = ClassStats::from_counts(&[900, 90, 10]).unwrap();
        let at_start = SamplerSpec::new(SamplerKind::Progressive, 0, 50).unwrap();
        let instance = SamplerSpec::new(SamplerKind::InstanceBalanced, 0, 50).unwrap();
        assert_eq!(
            class_distribution(&at_start, &stats),
            class_distribution(&instance, &stats)
        );
        let at_end = SamplerSpec::new(SamplerKind::Progressive, 50, 50).unwrap();
        let class_bal = SamplerSpec::new(SamplerKind::ClassBalanced, 50, 50).unwrap();
        assert_eq!(
            class_distribution(&at_end, &stats),
            class_distribution(&class_bal, &stats)
        );
    }

    #[test]
    fn reversed_mirrors_the_count_order() {
        let stats = ClassStats::from_counts(&[900, 90, 10]).unwrap();
        let spec = SamplerSpec::new(SamplerKind::Reversed, 0, 1).unwrap();
        let probs = class_distribution(&spec, &stats);
        // Class 0 (most frequent) gets the rarest class's frequency and
        // vice versa; the middle class keeps its own.
        assert!((probs[0] - 10.0 / 1000.0).abs() < 1e-15);
        assert!((probs[1] - 90.0 / 1000.0).abs() < 1e-15);
        assert!((probs[2] - 900.0 / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn class_balanced_sampling_is_uniform_over_classes() {
        // Binomial oracle: each class count over 1e5 draws stays within 3
        // standard deviations of N/3.
        let stats = ClassStats::from_counts(&[900, 90, 10]).unwrap();
        let class_indices: Vec<Vec<usize>> = {
            let mut start = 0;
            stats
                .counts()
                .iter()
                .map(|&c| {
                    let v: Vec<usize> = (start..start + c).collect();
                    start += c;
                    v
                })
                .collect()
        };
        let spec = SamplerSpec::new(SamplerKind::ClassBalanced, 0, 1).unwrap();
        let mut rng = RngState::new(99);
        let n = 100_000;
        let batch = sample_batch(&spec, &stats, &class_indices, n, &mut rng).unwrap();
        let mut counts = [0usize; 3];
        for &i in &batch {
            let class = if i < 900 {
                0
            } else if i < 990 {
                1
            } else {
                2
            };
            counts[class] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - n as f64 * p).abs() <= 3.0 * sigma,
                "count {c} outside 3 sigma of {}",
                n as f64 * p
            );
        }
    }

    #[test]
    fn sample_batch_rejects_empty_class() {
        let stats = stats_90_10();
        let class_indices = vec![(0..90).collect::<Vec<_>>(), Vec::new()];
        let spec = SamplerSpec::new(SamplerKind::ClassBalanced, 0, 1).unwrap();
        let mut rng = RngState::new(0);
        let result = sample_batch(&spec, &stats, &class_indices, 64, &mut rng);
        assert!(matches!(result, Err(Error::EmptyClass { class: 1 })));
    }

    fn toy_dataset(counts: &[usize]) -> Dataset {
        let mut labels = Vec::new();
        for (class, &count) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat(class).take(count));
        }
        let n = labels.len();
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i as f64) + 0.5 * j as f64);
        let ids = (0..n).map(|i| format!("s{i}")).collect();
        Dataset::new(
            features,
            Labels::Categorical {
                values: labels,
                num_classes: counts.len(),
            },
            ids,
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn smote_targets_equal_counts_is_identity() {
        let ds = toy_dataset(&[5, 3]);
        let stats = ClassStats::from_counts(&[5, 3]).unwrap();
        let mut rng = RngState::new(4);
        let out = smote_oversample(&ds, &stats, 2, &[5, 3], &mut rng).unwrap();
        assert_eq!(out.len(), ds.len());
        assert_eq!(out.features(), ds.features());
    }

    #[test]
    fn smote_synthetics_lie_between_parents() {
        // Two same-class points: every synthetic lies on the segment.
        let features = Array2::from_shape_vec((3, 1), vec![0.0, 10.0, 99.0]).unwrap();
        let ds = Dataset::new(
            features,
            Labels::Categorical {
                values: vec![0, 0, 1],
                num_classes: 2,
            },
            vec!["a".into(), "b".into(), "c".into()],
            None,
            None,
        )
        .unwrap();
        let stats = ClassStats::from_counts(&[2, 1]).unwrap();
        let mut rng = RngState::new(8);
        let out = smote_oversample(&ds, &stats, 1, &[12, 1], &mut rng).unwrap();
        assert_eq!(out.len(), 13);
        for i in 3..out.len() {
            let v = out.features()[(i, 0)];
            assert!((0.0..=10.0).contains(&v), "synthetic {v} off the segment");
            let (labels, _) = out.categorical_labels().unwrap();
            assert_eq!(labels[i], 0);
        }
        // Originals kept verbatim.
        assert_eq!(out.features()[(0, 0)], 0.0);
        assert_eq!(out.features()[(2, 0)], 99.0);
    }

    #[test]
    fn smote_skips_singleton_class_with_warning() {
        let ds = toy_dataset(&[4, 1]);
        let stats = ClassStats::from_counts(&[4, 1]).unwrap();
        let mut rng = RngState::new(2);
        let out = smote_oversample(&ds, &stats, 3, &[4, 10], &mut rng).unwrap();
        // Singleton class skipped, not an error; nothing added.
        assert_eq!(out.len(), ds.len());
    }

    #[test]
    fn smote_rejects_zero_neighbors() {
        let ds = toy_dataset(&[4, 4]);
        let stats = ClassStats::from_counts(&[4, 4]).unwrap();
        let mut rng = RngState::new(2);
        assert!(smote_oversample(&ds, &stats, 0, &[4, 4], &mut rng).is_err());
    }

    #[test]
    fn mixup_is_a_convex_combination() {
        let mut rng = RngState::new(5);
        let h_i = [0.0, 0.0];
        let h_j = [2.0, 4.0];
        let y_i = [1.0, 0.0];
        let y_j = [0.0, 1.0];
        for _ in 0..50 {
            let (h, y, lambda) = mixup_combine(&h_i, &h_j, &y_i, &y_j, 1.0, &mut rng).unwrap();
            assert!((h[0] - (1.0 - lambda) * 2.0).abs() < 1e-12);
            assert!((h[1] - (1.0 - lambda) * 4.0).abs() < 1e-12);
            let y_sum: f64 = y.iter().sum();
            assert!((y_sum - 1.0).abs() < 1e-12);
        }
        // lambda = 0.5 midpoint check via direct interpolation.
        let h = lerp(&h_i, &h_j, 0.5);
        assert_eq!(h, vec![1.0, 2.0]);
    }

    #[test]
    fn remix_label_weight_rules() {
        // Majority-first pair: label snaps fully to the minority side.
        assert_eq!(remix_label_weight(0.1, 100, 10, 3.0, 0.5), 0.0);
        // Minority-first pair mirrored.
        assert_eq!(remix_label_weight(0.95, 10, 100, 3.0, 0.5), 1.0);
        // Equal counts never snap.
        assert_eq!(remix_label_weight(0.3, 50, 50, 3.0, 0.5), 0.3);
        // Thresholds not met: keep lambda_x.
        assert_eq!(remix_label_weight(0.7, 100, 10, 3.0, 0.5), 0.7);
    }

    #[test]
    fn remix_with_infinite_kappa_equals_mixup() {
        let h_i = [1.0, -1.0];
        let h_j = [0.0, 3.0];
        let y_i = [1.0, 0.0];
        let y_j = [0.0, 1.0];
        let mut rng_a = RngState::new(77);
        let mut rng_b = RngState::new(77);
        for _ in 0..20 {
            let (h_m, y_m, lambda) =
                mixup_combine(&h_i, &h_j, &y_i, &y_j, 0.7, &mut rng_a).unwrap();
            let (h_r, y_r, (lx, _)) = remix_combine(
                &h_i,
                &h_j,
                &y_i,
                &y_j,
                100,
                10,
                0.7,
                f64::INFINITY,
                0.5,
                &mut rng_b,
            )
            .unwrap();
            assert_eq!(lambda, lx);
            assert_eq!(h_m, h_r);
            assert_eq!(y_m, y_r);
        }
    }

    #[test]
    fn bbn_combines_logits_and_losses() {
        let out = bbn_combine(&[1.0, 0.0], &[0.0, 1.0], 0, 1, 0.5).unwrap();
        assert_eq!(out.logits, vec![0.5, 0.5]);

        // beta = 1: pure conventional branch CE.
        let conv = bbn_combine(&[1.0, 0.0], &[0.0, 1.0], 0, 1, 1.0).unwrap();
        let (ce, _) = crate::losses::softmax_ce(&[1.0, 0.0], 0).unwrap();
        assert!((conv.loss - ce).abs() < 1e-12);

        // beta = 0: pure re-balancing branch CE.
        let rebal = bbn_combine(&[1.0, 0.0], &[0.0, 1.0], 0, 1, 0.0).unwrap();
        let (ce_r, _) = crate::losses::softmax_ce(&[0.0, 1.0], 1).unwrap();
        assert!((rebal.loss - ce_r).abs() < 1e-12);

        assert!(bbn_combine(&[1.0], &[0.0, 1.0], 0, 0, 0.5).is_err());
    }

    #[test]
    fn bbn_schedule_endpoints() {
        let schedule = BetaSchedule::ParabolicDecay;
        assert_eq!(schedule.beta(0, 100), 1.0);
        assert_eq!(schedule.beta(100, 100), 0.0);
        assert!(schedule.beta(50, 100) > 0.5);
    }
}
