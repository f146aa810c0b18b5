//! Imbalanced-regression utilities: label binning, label distribution
//! smoothing (LDS) and feature distribution smoothing (FDS).

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bin edges over a continuous label space: `B + 1` strictly increasing
/// values. A label equal to an interior edge belongs to the lower bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinScheme {
    edges: Vec<f64>,
}

impl BinScheme {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidBinning(
                "a bin scheme needs at least two edges".into(),
            ));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBinning(
                "bin edges must be strictly increasing".into(),
            ));
        }
        Ok(Self { edges })
    }

    pub fn num_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Bin index of a value: the number of interior edges strictly below it,
    /// clamped to the scheme's range for out-of-range values.
    pub fn assign(&self, value: f64) -> usize {
        let interior = &self.edges[1..self.edges.len() - 1];
        interior.iter().filter(|&&e| e < value).count()
    }
}

/// Binning strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinStrategy {
    EqualWidth,
    EqualCount,
}

/// Bin training labels. Returns the scheme and each sample's bin index.
pub fn bin_labels(
    labels: &[f64],
    num_bins: usize,
    strategy: BinStrategy,
) -> Result<(BinScheme, Vec<usize>)> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    if num_bins < 2 {
        return Err(Error::InvalidBinning("need at least two bins".into()));
    }
    let min = labels.iter().copied().fold(f64::INFINITY, f64::min);
    let max = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(Error::InvalidBinning(
            "labels are constant; binning undefined".into(),
        ));
    }
    let edges = match strategy {
        BinStrategy::EqualWidth => {
            let width = (max - min) / num_bins as f64;
            let mut edges: Vec<f64> = (0..=num_bins).map(|b| min + b as f64 * width).collect();
            // Pin the end points against accumulation error.
            edges[0] = min;
            edges[num_bins] = max;
            edges
        }
        BinStrategy::EqualCount => {
            let mut sorted = labels.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sorted.dedup();
            if sorted.len() < num_bins {
                return Err(Error::InvalidBinning(format!(
                    "equal-count binning needs at least {num_bins} distinct labels, found {}",
                    sorted.len()
                )));
            }
            let n = labels.len();
            let mut sorted_all = labels.to_vec();
            sorted_all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut edges = Vec::with_capacity(num_bins + 1);
            edges.push(min);
            for b in 1..num_bins {
                // Interior edge at the last value of bin b-1.
                edges.push(sorted_all[b * n / num_bins - 1]);
            }
            edges.push(max);
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidBinning(
                    "duplicate quantile edges; too many repeated labels for equal-count bins"
                        .into(),
                ));
            }
            edges
        }
    };
    let scheme = BinScheme::new(edges)?;
    let assignments = labels.iter().map(|&v| scheme.assign(v)).collect();
    Ok((scheme, assignments))
}

/// Smoothing kernel shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Identity,
    Gaussian,
    Triangular,
}

/// Symmetric truncated kernel in bin units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Width in bin units (standard deviation for the Gaussian).
    pub width: f64,
    /// Truncation radius in bins.
    pub truncation: usize,
}

impl KernelSpec {
    pub fn identity() -> Self {
        Self {
            kind: KernelKind::Identity,
            width: 1.0,
            truncation: 0,
        }
    }

    pub fn gaussian(width: f64, truncation: usize) -> Self {
        Self {
            kind: KernelKind::Gaussian,
            width,
            truncation,
        }
    }

    pub fn triangular(width: f64, truncation: usize) -> Self {
        Self {
            kind: KernelKind::Triangular,
            width,
            truncation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width <= 0.0 {
            return Err(Error::InvalidHyper {
                name: "width",
                value: self.width,
                requirement: "kernel width must be positive",
            });
        }
        Ok(())
    }

    /// Raw weights for offsets `-truncation ..= truncation`, normalized to
    /// sum to 1.
    pub fn weights(&self) -> Result<Vec<f64>> {
        self.validate()?;
        if matches!(self.kind, KernelKind::Identity) {
            return Ok(vec![1.0]);
        }
        let t = self.truncation as i64;
        let raw: Vec<f64> = (-t..=t)
            .map(|d| {
                let d = d as f64;
                match self.kind {
                    KernelKind::Identity => unreachable!(),
                    KernelKind::Gaussian => (-d * d / (2.0 * self.width * self.width)).exp(),
                    KernelKind::Triangular => (1.0 - d.abs() / (t as f64 + 1.0)).max(0.0),
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(raw.iter().map(|w| w / total).collect())
    }

    fn radius(&self) -> usize {
        if matches!(self.kind, KernelKind::Identity) {
            0
        } else {
            self.truncation
        }
    }
}

/// Label distribution smoothing: convolve the per-bin counts with the kernel.
///
/// Each source bin's mass is redistributed over its in-range neighborhood
/// with the truncated weights renormalized per source position, so the total
/// mass is conserved at every boundary. The identity kernel is a bit-exact
/// no-op, and the operation is linear in the counts.
pub fn lds_smooth(counts: &[f64], kernel: &KernelSpec) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::EmptyInput);
    }
    if counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::NonFinite { what: "bin counts" });
    }
    if counts.iter().all(|&c| c == 0.0) {
        return Err(Error::AllZeroCounts);
    }
    if matches!(kernel.kind, KernelKind::Identity) {
        kernel.validate()?;
        return Ok(counts.to_vec());
    }
    let weights = kernel.weights()?;
    let radius = kernel.radius() as i64;
    let num_bins = counts.len() as i64;
    let mut smoothed = vec![0.0; counts.len()];
    for (b, &mass) in counts.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let b = b as i64;
        let lo = (-radius).max(-b);
        let hi = radius.min(num_bins - 1 - b);
        let z: f64 = (lo..=hi).map(|d| weights[(d + radius) as usize]).sum();
        for d in lo..=hi {
            smoothed[(b + d) as usize] += mass * weights[(d + radius) as usize] / z;
        }
    }
    Ok(smoothed)
}

/// Per-sample loss weights from a smoothed label density: the inverse
/// effective density of each sample's bin, clipped at the 99th percentile of
/// the raw weights to bound variance.
pub fn lds_weights(smoothed_density: &[f64], sample_bins: &[usize]) -> Result<Vec<f64>> {
    let mut raw = Vec::with_capacity(sample_bins.len());
    for &b in sample_bins {
        if b >= smoothed_density.len() {
            return Err(Error::InvalidBinning(format!(
                "bin index {b} exceeds the {} bins of the density",
                smoothed_density.len()
            )));
        }
        let density = smoothed_density[b];
        if density <= 0.0 {
            return Err(Error::InvalidBinning(format!(
                "bin {b} has zero smoothed density; weight undefined"
            )));
        }
        raw.push(1.0 / density);
    }
    let mut sorted = raw.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cap_index = ((sorted.len() as f64 * 0.99).ceil() as usize).clamp(1, sorted.len());
    let cap = sorted[cap_index - 1];
    Ok(raw.into_iter().map(|w| w.min(cap)).collect())
}

/// Per-bin feature statistics and their kernel-smoothed counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStatistics {
    pub counts: Vec<usize>,
    /// Per-bin feature means, `B x d`.
    pub mean: Array2<f64>,
    /// Per-bin diagonal feature variances, `B x d`.
    pub variance: Array2<f64>,
    pub smoothed_mean: Array2<f64>,
    pub smoothed_variance: Array2<f64>,
}

impl BinStatistics {
    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn is_populated(&self, bin: usize) -> bool {
        self.counts[bin] > 0
    }
}

/// Feature distribution smoothing statistics: per-bin mean and diagonal
/// variance, then a kernel-weighted average across nearby populated bins
/// (weights renormalized over the populated bins in range).
pub fn fds_statistics(
    features: ArrayView2<'_, f64>,
    sample_bins: &[usize],
    num_bins: usize,
    kernel: &KernelSpec,
) -> Result<BinStatistics> {
    if features.nrows() != sample_bins.len() {
        return Err(Error::LengthMismatch {
            left: features.nrows(),
            right: sample_bins.len(),
        });
    }
    let d = features.ncols();
    let mut counts = vec![0usize; num_bins];
    let mut mean = Array2::zeros((num_bins, d));
    for (row, &b) in sample_bins.iter().enumerate() {
        if b >= num_bins {
            return Err(Error::InvalidBinning(format!(
                "sample bin {b} out of range for {num_bins} bins"
            )));
        }
        counts[b] += 1;
        let mut m = mean.row_mut(b);
        m += &features.row(row);
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::NoPopulatedBins);
    }
    for b in 0..num_bins {
        if counts[b] > 0 {
            let mut m = mean.row_mut(b);
            m /= counts[b] as f64;
        }
    }
    let mut variance = Array2::zeros((num_bins, d));
    for (row, &b) in sample_bins.iter().enumerate() {
        for c in 0..d {
            let diff = features[(row, c)] - mean[(b, c)];
            variance[(b, c)] += diff * diff;
        }
    }
    for b in 0..num_bins {
        if counts[b] > 0 {
            let mut v = variance.row_mut(b);
            v /= counts[b] as f64;
        }
    }

    // Smooth across populated bins only, renormalizing per target bin.
    let weights = kernel.weights()?;
    let radius = kernel.radius() as i64;
    let mut smoothed_mean = mean.clone();
    let mut smoothed_variance = variance.clone();
    for b in 0..num_bins {
        let bi = b as i64;
        let mut z = 0.0;
        let mut acc_mean = vec![0.0; d];
        let mut acc_var = vec![0.0; d];
        for dlt in -radius..=radius {
            let src = bi + dlt;
            if src < 0 || src >= num_bins as i64 {
                continue;
            }
            let src = src as usize;
            if counts[src] == 0 {
                continue;
            }
            let w = weights[(dlt + radius) as usize];
            z += w;
            for c in 0..d {
                acc_mean[c] += w * mean[(src, c)];
                acc_var[c] += w * variance[(src, c)];
            }
        }
        if z > 0.0 {
            for c in 0..d {
                smoothed_mean[(b, c)] = acc_mean[c] / z;
                smoothed_variance[(b, c)] = acc_var[c] / z;
            }
        }
        // Bins with no populated neighbors keep their raw (zero) statistics.
    }
    Ok(BinStatistics {
        counts,
        mean,
        variance,
        smoothed_mean,
        smoothed_variance,
    })
}

/// Whiten with a bin's raw statistics and re-color with the smoothed ones,
/// elementwise: `(f - mean) * sqrt((smoothed_var + eps) / (var + eps)) +
/// smoothed_mean`.
pub fn fds_calibrate(
    feature: &[f64],
    bin: usize,
    stats: &BinStatistics,
    eps: f64,
) -> Result<Vec<f64>> {
    if bin >= stats.num_bins() {
        return Err(Error::InvalidBinning(format!(
            "bin {bin} out of range for {} bins",
            stats.num_bins()
        )));
    }
    if feature.len() != stats.mean.ncols() {
        return Err(Error::DimensionMismatch {
            expected: stats.mean.ncols(),
            got: feature.len(),
        });
    }
    Ok(feature
        .iter()
        .enumerate()
        .map(|(c, &f)| {
            let scale =
                ((stats.smoothed_variance[(bin, c)] + eps) / (stats.variance[(bin, c)] + eps))
                    .sqrt();
            (f - stats.mean[(bin, c)]) * scale + stats.smoothed_mean[(bin, c)]
        })
        .collect())
}

/// Elementwise scale factors of the calibration map (the gradient of
/// [`fds_calibrate`] with respect to the feature vector).
pub fn fds_calibration_scale(stats: &BinStatistics, bin: usize, eps: f64) -> Vec<f64> {
    (0..stats.mean.ncols())
        .map(|c| {
            ((stats.smoothed_variance[(bin, c)] + eps) / (stats.variance[(bin, c)] + eps)).sqrt()
        })
        .collect()
}
