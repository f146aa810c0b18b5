//! Dataset ingestion from CSV and synthetic long-tailed generation.
//!
//! CSV layout: a header row with columns `id, f0..f{d-1}, label` and the
//! optional `group` and `timestamp` columns. Features are precomputed
//! numeric vectors; the toolkit performs no featurization.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::metrics::format_json_f64;
use crate::rng::RngState;

/// How the label column is interpreted.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSchema {
    /// Labels drawn from a declared vocabulary; the class id is the position
    /// in the list.
    Categorical { classes: Vec<String> },
    /// Labels are integers already in `0..num_classes`.
    CategoricalIndexed { num_classes: usize },
    /// Real-valued labels with an opaque unit string.
    Continuous { unit: String },
}

/// Load a dataset from a CSV file.
pub fn load_csv_dataset(path: &Path, schema: &LabelSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_col = find("id").ok_or_else(|| Error::MissingColumn { name: "id".into() })?;
    let label_col = find("label").ok_or_else(|| Error::MissingColumn {
        name: "label".into(),
    })?;
    let group_col = find("group");
    let ts_col = find("timestamp");
    let mut feature_cols = Vec::new();
    loop {
        let name = format!("f{}", feature_cols.len());
        match find(&name) {
            Some(col) => feature_cols.push(col),
            None => break,
        }
    }
    if feature_cols.is_empty() {
        return Err(Error::MissingColumn { name: "f0".into() });
    }

    let mut ids = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut groups: Vec<String> = Vec::new();
    let mut timestamps: Vec<i64> = Vec::new();
    for (row_number, record) in reader.records().enumerate() {
        let record = record?;
        ids.push(record.get(id_col).unwrap_or("").to_string());
        for (&col, name_index) in feature_cols.iter().zip(0..) {
            let cell = record.get(col).unwrap_or("");
            let value: f64 = cell.trim().parse().map_err(|_| Error::BadCell {
                row: row_number,
                column: format!("f{name_index}"),
                value: cell.to_string(),
            })?;
            rows.push(value);
        }
        raw_labels.push(record.get(label_col).unwrap_or("").trim().to_string());
        if let Some(col) = group_col {
            groups.push(record.get(col).unwrap_or("").to_string());
        }
        if let Some(col) = ts_col {
            let cell = record.get(col).unwrap_or("");
            let value: i64 = cell.trim().parse().map_err(|_| Error::BadCell {
                row: row_number,
                column: "timestamp".into(),
                value: cell.to_string(),
            })?;
            timestamps.push(value);
        }
    }
    let n = ids.len();
    let d = feature_cols.len();
    let features = Array2::from_shape_vec((n, d), rows)
        .map_err(|e| Error::MalformedReport(e.to_string()))?;

    let labels = match schema {
        LabelSchema::Categorical { classes } => {
            let lookup: BTreeMap<&str, usize> = classes
                .iter()
                .enumerate()
                .map(|(i, c)| (c.as_str(), i))
                .collect();
            let values = raw_labels
                .iter()
                .enumerate()
                .map(|(row, raw)| {
                    lookup.get(raw.as_str()).copied().ok_or(Error::UnknownLabel {
                        row,
                        value: raw.clone(),
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
            Labels::Categorical {
                values,
                num_classes: classes.len(),
            }
        }
        LabelSchema::CategoricalIndexed { num_classes } => {
            let values = raw_labels
                .iter()
                .enumerate()
                .map(|(row, raw)| {
                    let value: usize = raw.parse().map_err(|_| Error::UnknownLabel {
                        row,
                        value: raw.clone(),
                    })?;
                    if value >= *num_classes {
                        return Err(Error::UnknownLabel {
                            row,
                            value: raw.clone(),
                        });
                    }
                    Ok(value)
                })
                .collect::<Result<Vec<usize>>>()?;
            Labels::Categorical {
                values,
                num_classes: *num_classes,
            }
        }
        LabelSchema::Continuous { unit } => {
            let values = raw_labels
                .iter()
                .enumerate()
                .map(|(row, raw)| {
                    raw.parse().map_err(|_| Error::BadCell {
                        row,
                        column: "label".into(),
                        value: raw.clone(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Labels::Continuous {
                values,
                unit: unit.clone(),
            }
        }
    };
    Dataset::new(
        features,
        labels,
        ids,
        group_col.map(|_| groups),
        ts_col.map(|_| timestamps),
    )
}

/// Write a dataset as CSV with 17-significant-digit features, so a load
/// round-trips bit-exactly.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let d = dataset.dim();
    let mut header = String::from("id");
    for c in 0..d {
        header.push_str(&format!(",f{c}"));
    }
    header.push_str(",label");
    if dataset.group_keys().is_some() {
        header.push_str(",group");
    }
    if dataset.timestamps().is_some() {
        header.push_str(",timestamp");
    }
    writeln!(file, "{header}")?;
    for i in 0..dataset.len() {
        let mut line = dataset.ids()[i].clone();
        for c in 0..d {
            line.push(',');
            line.push_str(&format_json_f64(dataset.features()[(i, c)]));
        }
        line.push(',');
        match dataset.labels() {
            Labels::Categorical { values, .. } => line.push_str(&values[i].to_string()),
            Labels::Continuous { values, .. } => line.push_str(&format_json_f64(values[i])),
        }
        if let Some(keys) = dataset.group_keys() {
            line.push(',');
            line.push_str(&keys[i]);
        }
        if let Some(ts) = dataset.timestamps() {
            line.push(',');
            line.push_str(&ts[i].to_string());
        }
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Count decay shape across the class rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountDecay {
    PowerLaw,
    Exponential,
}

/// Synthetic long-tailed classification dataset description.
///
/// Class-conditional distributions are Gaussians whose parameters depend only
/// on `(seed, class)` — never on the counts — so resampling the label
/// distribution leaves the per-class distributions fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_class: usize,
    /// Imbalance ratio `n_1 / n_K`.
    pub imbalance_ratio: f64,
    pub n_total: usize,
    pub dim: usize,
    pub decay: CountDecay,
    /// Shared isotropic standard deviation.
    pub sigma: f64,
    /// Class-mean radius in units of sigma.
    pub mean_radius_sigmas: f64,
}

impl SyntheticSpec {
    pub fn new(num_class: usize, imbalance_ratio: f64, n_total: usize, dim: usize) -> Self {
        Self {
            num_class,
            imbalance_ratio,
            n_total,
            dim,
            decay: CountDecay::PowerLaw,
            sigma: 1.0,
            mean_radius_sigmas: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_class < 1 || self.dim < 1 || self.n_total < 2 {
            return Err(Error::InfeasibleSpec(
                "need at least one class, one dimension and two samples".into(),
            ));
        }
        if self.imbalance_ratio < 1.0 {
            return Err(Error::InfeasibleSpec(format!(
                "imbalance ratio must be >= 1, got {}",
                self.imbalance_ratio
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InfeasibleSpec("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Per-class counts matching the decay shape, scaled so `n_1/n_K` hits the
/// requested ratio within rounding and the total matches `n_total`.
pub fn synthetic_counts(spec: &SyntheticSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let k = spec.num_class;
    if k == 1 {
        return Ok(vec![spec.n_total]);
    }
    let rho = spec.imbalance_ratio;
    // Relative sizes r_k with r_1 = 1 and r_K = 1/rho.
    let relative: Vec<f64> = match spec.decay {
        CountDecay::PowerLaw => {
            // Solve k^a = rho for the exponent by bisection.
            let target = rho.ln();
            let mut lo = 0.0f64;
            let mut hi = 64.0f64;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (k as f64).ln() * mid < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-9 {
                    break;
                }
            }
            let a = 0.5 * (lo + hi);
            (1..=k).map(|rank| (rank as f64).powf(-a)).collect()
        }
        CountDecay::Exponential => {
            let r = rho.powf(-1.0 / (k as f64 - 1.0));
            (0..k).map(|rank| r.powi(rank as i32)).collect()
        }
    };
    let total_relative: f64 = relative.iter().sum();
    let scale = spec.n_total as f64 / total_relative;
    let counts: Vec<usize> = relative
        .iter()
        .map(|r| (r * scale).round().max(1.0) as usize)
        .collect();
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::InfeasibleSpec(format!(
            "imbalance ratio {rho} forces a class below 2 samples at n_total {}",
            spec.n_total
        )));
    }
    Ok(counts)
}

/// Generate the synthetic long-tailed dataset. Deterministic in
/// `(spec, seed)`; class-conditional Gaussian parameters are derived from the
/// seed and the class id only.
pub fn generate_synthetic_lt(spec: &SyntheticSpec, rng: &RngState) -> Result<Dataset> {
    let counts = synthetic_counts(spec)?;
    let d = spec.dim;
    let n: usize = counts.iter().sum();
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);

    let mut row = 0;
    for (class, &count) in counts.iter().enumerate() {
        let mean = class_mean(spec, rng, class);
        // A per-class stream keeps every class's draws independent of the
        // other classes' counts.
        let mut class_rng = rng.fork_named("features").fork(class as u64);
        for _ in 0..count {
            for (c, &m) in mean.iter().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut class_rng);
                features[(row, c)] = m + spec.sigma * noise;
            }
            labels.push(class);
            ids.push(format!("syn-{row}"));
            row += 1;
        }
    }
    Dataset::new(
        features,
        Labels::Categorical {
            values: labels,
            num_classes: spec.num_class,
        },
        ids,
        None,
        None,
    )
}

/// The frozen class mean: a seeded random direction at the configured radius.
pub fn class_mean(spec: &SyntheticSpec, rng: &RngState, class: usize) -> Vec<f64> {
    let mut mean_rng = rng.fork_named("means").fork(class as u64);
    let mut direction: Vec<f64> = (0..spec.dim)
        .map(|_| StandardNormal.sample(&mut mean_rng))
        .collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let radius = spec.mean_radius_sigmas * spec.sigma;
    for v in direction.iter_mut() {
        *v = *v / norm * radius;
    }
    direction
}

/// Resampling mode for label-distribution experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    /// Duplicate each class's samples wholesale; targets must be integer
    /// multiples of the current counts (preserves class-conditional
    /// empirical distributions exactly).
    Replicate,
    /// Draw without replacement; targets must not exceed current counts.
    Subsample,
}

/// Change the label distribution of a categorical dataset.
pub fn resample_label_distribution(
    dataset: &Dataset,
    target_counts: &[usize],
    rng: &mut RngState,
    mode: ResampleMode,
) -> Result<Dataset> {
    let (labels, num_classes) = dataset.categorical_labels()?;
    if target_counts.len() != num_classes {
        return Err(Error::LengthMismatch {
            left: num_classes,
            right: target_counts.len(),
        });
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &label) in labels.iter().enumerate() {
        members[label].push(i);
    }

    let mut keep: Vec<usize> = Vec::new();
    match mode {
        ResampleMode::Replicate => {
            for (class, own) in members.iter().enumerate() {
                let current = own.len();
                let target = target_counts[class];
                if current == 0 {
                    if target != 0 {
                        return Err(Error::InvalidResample(format!(
                            "class {class} has no samples to replicate"
                        )));
                    }
                    continue;
                }
                if target % current != 0 {
                    return Err(Error::InvalidResample(format!(
                        "class {class}: target {target} is not a multiple of {current}"
                    )));
                }
                let multiplier = target / current;
                for _ in 0..multiplier {
                    keep.extend_from_slice(own);
                }
            }
        }
        ResampleMode::Subsample => {
            for (class, own) in members.iter().enumerate() {
                let target = target_counts[class];
                if target > own.len() {
                    return Err(Error::InvalidResample(format!(
                        "class {class}: target {target} exceeds the {} available samples",
                        own.len()
                    )));
                }
                let mut shuffled = own.clone();
                rng.shuffle(&mut shuffled);
                keep.extend_from_slice(&shuffled[..target]);
            }
        }
    }
    keep.sort_unstable();
    let mut out = dataset.subset(&keep)?;
    // Replica ids get a suffix so they stay distinguishable.
    if matches!(mode, ResampleMode::Replicate) {
        out = dedup_ids(out)?;
    }
    Ok(out)
}

fn dedup_ids(dataset: Dataset) -> Result<Dataset> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let ids: Vec<String> = dataset
        .ids()
        .iter()
        .map(|id| {
            let count = seen.entry(id.clone()).or_insert(0);
            let out = if *count == 0 {
                id.clone()
            } else {
                format!("{id}-r{count}")
            };
            *count += 1;
            out
        })
        .collect();
    Dataset::new(
        dataset.features().clone(),
        dataset.labels().clone(),
        ids,
        dataset.group_keys().map(|k| k.to_vec()),
        dataset.timestamps().map(|t| t.to_vec()),
    )
}
