//! Regression metrics: MSE, RMSE, MAE, R², Pearson and Spearman correlation.

use log::warn;

use crate::error::{Error, Result};
use crate::metrics::ranking::ranks_with_ties;
use crate::metrics::report::MetricReport;

/// Compute all regression metrics.
///
/// With a constant true vector, R², PCC and Spearman are undefined and
/// reported as NaN with a warning (same for a constant prediction vector and
/// the correlations).
pub fn regression_metrics(truth: &[f64], predicted: &[f64]) -> Result<MetricReport> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = truth.len() as f64;
    let mse = truth
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / n;
    let mae = truth
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).abs())
        .sum::<f64>()
        / n;

    let mean_y = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let r2 = if ss_tot == 0.0 {
        warn!("constant true vector: R2 undefined, reported as NaN");
        f64::NAN
    } else {
        1.0 - mse * n / ss_tot
    };

    let pcc = pearson(truth, predicted);
    let spearman = {
        let rank_t = ranks_with_ties(truth);
        let rank_p = ranks_with_ties(predicted);
        pearson(&rank_t, &rank_p)
    };

    let mut report = MetricReport::new();
    report.insert("mse", mse);
    report.insert("rmse", mse.sqrt());
    report.insert("mae", mae);
    report.insert("r2", r2);
    report.insert("pcc", pcc);
    report.insert("spearman", spearman);
    Ok(report)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 || var_b == 0.0 {
        warn!("constant vector: correlation undefined, reported as NaN");
        return f64::NAN;
    }
    cov / (var_a * var_b).sqrt()
}

/// Pearson correlation of two equally long samples; NaN when either is
/// constant. Exposed for run-to-run comparisons.
pub(crate) fn pearson_correlation(a: &[f64], b: &[f64]) -> f64 {
    pearson(a, b)
}
