//! Deterministic dataset partitioning: standard (balanced test set), random,
//! temporal, group, and open-class holdout variants of each.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Split protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    /// Balanced test and validation sets sized by the minority class.
    Standard,
    /// Uniform shuffle cut at the fractions.
    Random,
    /// Earliest samples train, latest test; boundary ties go to the earlier side.
    Temporal,
    /// Whole groups assigned greedily by largest remaining deficit.
    Group,
    /// Holds out the smallest classes as open classes, then applies the base
    /// method to the remaining samples.
    Open { base: Box<SplitMethod> },
}

impl SplitMethod {
    pub fn name(&self) -> String {
        match self {
            SplitMethod::Standard => "standard".into(),
            SplitMethod::Random => "random".into(),
            SplitMethod::Temporal => "temporal".into(),
            SplitMethod::Group => "group".into(),
            SplitMethod::Open { base } => format!("open-{}", base.name()),
        }
    }
}

/// Fully deterministic description of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub method: SplitMethod,
    /// (train, valid, test) fractions; positive, summing to 1.
    pub fractions: (f64, f64, f64),
    /// Fraction of classes held out as open (only used by `Open` methods).
    #[serde(default)]
    pub open_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    pub fn new(method: SplitMethod, fractions: (f64, f64, f64), seed: u64) -> Self {
        Self {
            method,
            fractions,
            open_fraction: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(Error::InvalidPlan(format!(
                "fractions must be positive, got ({a}, {b}, {c})"
            )));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPlan(format!(
                "fractions must sum to 1, got {}",
                a + b + c
            )));
        }
        if !(0.0..1.0).contains(&self.open_fraction) {
            return Err(Error::InvalidPlan(format!(
                "open_fraction must lie in [0, 1), got {}",
                self.open_fraction
            )));
        }
        if let SplitMethod::Open { base } = &self.method {
            if matches!(**base, SplitMethod::Open { .. }) {
                return Err(Error::InvalidPlan(
                    "open variants wrap non-open methods only".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Index lists of a finished split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub open_classes: BTreeSet<usize>,
    pub plan: SplitPlan,
}

impl SplitResult {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("split result serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<SplitResult> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Partition a dataset according to the plan.
pub fn split_dataset(dataset: &Dataset, plan: &SplitPlan) -> Result<SplitResult> {
    plan.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    match &plan.method {
        SplitMethod::Open { base } => open_holdout(dataset, plan, base),
        base => {
            let (train, valid, test) = split_indices(dataset, &all, base, plan)?;
            Ok(SplitResult {
                train,
                valid,
                test,
                open_classes: BTreeSet::new(),
                plan: plan.clone(),
            })
        }
    }
}

pub fn standard_split(dataset: &Dataset, plan: &SplitPlan) -> Result<SplitResult> {
    run_single(dataset, plan, &SplitMethod::Standard)
}

pub fn random_split(dataset: &Dataset, plan: &SplitPlan) -> Result<SplitResult> {
    run_single(dataset, plan, &SplitMethod::Random)
}

pub fn temporal_split(dataset: &Dataset, plan: &SplitPlan) -> Result<SplitResult> {
    run_single(dataset, plan, &SplitMethod::Temporal)
}

pub fn group_split(dataset: &Dataset, plan: &SplitPlan) -> Result<SplitResult> {
    run_single(dataset, plan, &SplitMethod::Group)
}

fn run_single(dataset: &Dataset, plan: &SplitPlan, method: &SplitMethod) -> Result<SplitResult> {
    plan.validate()?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let (train, valid, test) = split_indices(dataset, &all, method, plan)?;
    Ok(SplitResult {
        train,
        valid,
        test,
        open_classes: BTreeSet::new(),
        plan: plan.clone(),
    })
}

type Parts = (Vec<usize>, Vec<usize>, Vec<usize>);

fn split_indices(
    dataset: &Dataset,
    indices: &[usize],
    method: &SplitMethod,
    plan: &SplitPlan,
) -> Result<Parts> {
    match method {
        SplitMethod::Standard => standard_indices(dataset, indices, plan),
        SplitMethod::Random => Ok(random_indices(indices, plan)),
        SplitMethod::Temporal => temporal_indices(dataset, indices, plan),
        SplitMethod::Group => group_indices(dataset, indices, plan),
        SplitMethod::Open { .. } => Err(Error::InvalidPlan(
            "open variants cannot be nested".into(),
        )),
    }
}

/// Balanced test and validation sets: `max(1, floor(fraction * n_min))`
/// samples per class, drawn uniformly per class; the remainder trains.
fn standard_indices(dataset: &Dataset, indices: &[usize], plan: &SplitPlan) -> Result<Parts> {
    let (labels, _) = dataset.categorical_labels()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_class.entry(labels[i]).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::DegenerateSplit(
            "a balanced test set needs at least two classes".into(),
        ));
    }
    let n_min = by_class.values().map(Vec::len).min().unwrap();
    for (&class, members) in &by_class {
        if members.len() < 3 {
            return Err(Error::ClassTooSmall {
                class,
                need: 3,
                have: members.len(),
            });
        }
    }
    let (_, f_valid, f_test) = plan.fractions;
    let per_class_test = ((f_test * n_min as f64).floor() as usize).max(1);
    let per_class_valid = ((f_valid * n_min as f64).floor() as usize).max(1);
    for (&class, members) in &by_class {
        let need = per_class_test + per_class_valid + 1;
        if members.len() < need {
            return Err(Error::ClassTooSmall {
                class,
                need,
                have: members.len(),
            });
        }
    }

    let root = RngState::new(plan.seed).fork_named("standard");
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for (&class, members) in &by_class {
        let mut shuffled = members.clone();
        root.fork(class as u64).shuffle(&mut shuffled);
        test.extend_from_slice(&shuffled[..per_class_test]);
        valid.extend_from_slice(&shuffled[per_class_test..per_class_test + per_class_valid]);
        train.extend_from_slice(&shuffled[per_class_test + per_class_valid..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok((train, valid, test))
}

/// Uniform shuffle cut at the fractions.
fn random_indices(indices: &[usize], plan: &SplitPlan) -> Parts {
    let mut shuffled = indices.to_vec();
    RngState::new(plan.seed)
        .fork_named("random")
        .shuffle(&mut shuffled);
    let n = shuffled.len();
    let (f_train, f_valid, _) = plan.fractions;
    let cut_train = (f_train * n as f64).floor() as usize;
    let cut_valid = ((f_train + f_valid) * n as f64).floor() as usize;
    let train = shuffled[..cut_train].to_vec();
    let valid = shuffled[cut_train..cut_valid].to_vec();
    let test = shuffled[cut_valid..].to_vec();
    (train, valid, test)
}

/// Chronological cut; all samples sharing a boundary timestamp land on the
/// earlier side.
fn temporal_indices(dataset: &Dataset, indices: &[usize], plan: &SplitPlan) -> Result<Parts> {
    let ts = dataset
        .timestamps()
        .ok_or(Error::MissingField { what: "timestamps" })?;
    let mut sorted = indices.to_vec();
    sorted.sort_by_key(|&i| (ts[i], i));
    let n = sorted.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if ts[sorted[0]] == ts[sorted[n - 1]] {
        return Err(Error::DegenerateSplit(
            "all timestamps are equal; no temporal order".into(),
        ));
    }
    let (f_train, f_valid, _) = plan.fractions;
    let mut cut_train = (f_train * n as f64).floor() as usize;
    while cut_train > 0 && cut_train < n && ts[sorted[cut_train]] == ts[sorted[cut_train - 1]] {
        cut_train += 1;
    }
    let mut cut_valid = (((f_train + f_valid) * n as f64).floor() as usize).max(cut_train);
    while cut_valid > 0 && cut_valid < n && ts[sorted[cut_valid]] == ts[sorted[cut_valid - 1]] {
        cut_valid += 1;
    }
    if cut_valid == cut_train {
        warn!("temporal split: boundary tie block swallowed the validation set");
    }
    if cut_valid == n {
        warn!("temporal split: boundary tie block swallowed the test set");
    }
    Ok((
        sorted[..cut_train].to_vec(),
        sorted[cut_train..cut_valid].to_vec(),
        sorted[cut_valid..].to_vec(),
    ))
}

/// Whole-group assignment: groups sorted by size descending (seeded shuffle
/// breaks size ties), each placed in the partition currently furthest below
/// its target sample count.
fn group_indices(dataset: &Dataset, indices: &[usize], plan: &SplitPlan) -> Result<Parts> {
    let keys = dataset
        .group_keys()
        .ok_or(Error::MissingField { what: "group keys" })?;
    let mut by_key: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_key.entry(keys[i].as_str()).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = by_key.into_values().collect();
    RngState::new(plan.seed)
        .fork_named("group")
        .shuffle(&mut groups);
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));

    let n = indices.len() as f64;
    let (f_train, f_valid, f_test) = plan.fractions;
    let targets = [f_train * n, f_valid * n, f_test * n];
    let mut assigned = [0.0f64; 3];
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for group in groups {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (p, (&target, &got)) in targets.iter().zip(&assigned).enumerate() {
            let deficit = target - got;
            if deficit > best_deficit {
                best_deficit = deficit;
                best = p;
            }
        }
        assigned[best] += group.len() as f64;
        parts[best].extend(group);
    }
    let [mut train, mut valid, mut test] = parts;
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok((train, valid, test))
}

/// Remove the smallest classes from train/valid entirely, send all their
/// samples to test, and partition the remaining classes with the base method.
fn open_holdout(dataset: &Dataset, plan: &SplitPlan, base: &SplitMethod) -> Result<SplitResult> {
    let (labels, num_classes) = dataset.categorical_labels()?;
    if num_classes < 3 {
        return Err(Error::DegenerateSplit(
            "open-class holdout needs at least three classes".into(),
        ));
    }
    if plan.open_fraction * num_classes as f64 >= (num_classes - 1) as f64 {
        return Err(Error::DegenerateSplit(format!(
            "open_fraction {} leaves nothing to train on with {num_classes} classes",
            plan.open_fraction
        )));
    }
    let n_open = (plan.open_fraction * num_classes as f64).ceil() as usize;

    let mut counts = vec![0usize; num_classes];
    for &label in labels {
        counts[label] += 1;
    }
    let mut by_size: Vec<usize> = (0..num_classes).collect();
    by_size.sort_by_key(|&k| (counts[k], k));
    let open_classes: BTreeSet<usize> = by_size.into_iter().take(n_open).collect();

    let closed: Vec<usize> = (0..dataset.len())
        .filter(|&i| !open_classes.contains(&labels[i]))
        .collect();
    let (train, valid, mut test) = split_indices(dataset, &closed, base, plan)?;
    let mut open_samples: Vec<usize> = (0..dataset.len())
        .filter(|&i| open_classes.contains(&labels[i]))
        .collect();
    open_samples.sort_unstable();
    test.extend(open_samples);
    Ok(SplitResult {
        train,
        valid,
        test,
        open_classes,
        plan: plan.clone(),
    })
}
