//! Re-balancing losses over logits, each returning the value and the
//! analytic gradient with respect to the logits.
//!
//! The family: vanilla softmax cross-entropy, cost-sensitive re-weighting by
//! inverse label frequency, class-balanced (effective-number) weighting with
//! cross-entropy or focal modulation, balanced softmax (frequency-shifted
//! logits), influence-balanced down-weighting, a focal loss for regression,
//! and a distillation loss mixing a hard label with a teacher distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::ClassStats;

/// Floor for arguments of `log` in loss values.
pub const LOG_FLOOR: f64 = 1e-12;

/// Loss selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    CrossEntropy,
    CostSensitive,
    ClassBalancedFocal,
    ClassBalancedCe,
    BalancedSoftmax,
    InfluenceBalanced,
    FocalR,
    Dive,
}

/// Hyperparameters for the loss family. `gamma` is the effective-number base
/// of the class-balanced losses and the exponent of the regression focal
/// loss; `beta` is the focal exponent of the class-balanced focal loss and
/// the error scale of the regression focal loss; `lambda_kd` trades the hard
/// label against the teacher term of the distillation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub gamma: f64,
    pub beta: f64,
    pub lambda_kd: f64,
    pub epsilon: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            gamma: 0.99,
            beta: 2.0,
            lambda_kd: 0.5,
            epsilon: LOG_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LossKind::ClassBalancedFocal | LossKind::ClassBalancedCe => {
                if !(self.gamma > 0.0 && self.gamma < 1.0) {
                    return Err(Error::InvalidHyper {
                        name: "gamma",
                        value: self.gamma,
                        requirement: "class-balanced losses need gamma in (0, 1)",
                    });
                }
                if self.beta < 0.0 {
                    return Err(Error::InvalidHyper {
                        name: "beta",
                        value: self.beta,
                        requirement: "focal exponent must be >= 0",
                    });
                }
            }
            LossKind::FocalR => {
                if self.beta < 0.0 || self.gamma < 0.0 {
                    return Err(Error::InvalidHyper {
                        name: "beta/gamma",
                        value: self.beta.min(self.gamma),
                        requirement: "focal regression needs beta, gamma >= 0",
                    });
                }
            }
            LossKind::Dive => {
                if !(0.0..=1.0).contains(&self.lambda_kd) {
                    return Err(Error::InvalidHyper {
                        name: "lambda_kd",
                        value: self.lambda_kd,
                        requirement: "distillation trade-off must lie in [0, 1]",
                    });
                }
            }
            _ => {}
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidHyper {
                name: "epsilon",
                value: self.epsilon,
                requirement: "stabilizer must be positive",
            });
        }
        Ok(())
    }
}

/// Max-subtracted softmax.
pub fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite { what: "logits" });
    }
    Ok(())
}

fn log_floored(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Vanilla softmax cross-entropy `-log p_y`; gradient `p - onehot(y)`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    check_finite(logits)?;
    let p = stable_softmax(logits);
    let value = -log_floored(p[label]);
    let mut grad = p;
    grad[label] -= 1.0;
    Ok((value, grad))
}

/// Cross-entropy against a soft target distribution `-sum_k t_k log p_k`;
/// gradient `p - t`. Used by the instance combiners.
pub fn softmax_ce_soft(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_finite(logits)?;
    if logits.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.len(),
            got: target.len(),
        });
    }
    let p = stable_softmax(logits);
    let value = -target
        .iter()
        .zip(&p)
        .map(|(t, pk)| if *t > 0.0 { t * log_floored(*pk) } else { 0.0 })
        .sum::<f64>();
    let grad = p.iter().zip(target).map(|(pk, t)| pk - t).collect();
    Ok((value, grad))
}

/// Cost-sensitive loss: cross-entropy scaled by the inverse label frequency
/// `1 / pi_y`.
pub fn cost_sensitive(logits: &[f64], label: usize, stats: &ClassStats) -> Result<(f64, Vec<f64>)> {
    if label >= stats.num_classes() {
        return Err(Error::LabelOutOfRange {
            index: 0,
            label,
            num_classes: stats.num_classes(),
        });
    }
    let pi = stats.frequency(label);
    if pi <= 0.0 {
        return Err(Error::ZeroFrequency { class: label });
    }
    let (value, mut grad) = softmax_ce(logits, label)?;
    let w = 1.0 / pi;
    for g in grad.iter_mut() {
        *g *= w;
    }
    Ok((value * w, grad))
}

/// Class-balanced loss variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbVariant {
    Focal,
    CrossEntropy,
}

/// Effective-number weight `(1 - gamma) / (1 - gamma^{n_y})`.
pub fn effective_number_weight(gamma: f64, count: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidHyper {
            name: "gamma",
            value: gamma,
            requirement: "effective-number base must lie in (0, 1)",
        });
    }
    Ok((1.0 - gamma) / (1.0 - gamma.powi(count as i32)))
}

/// Class-balanced loss: `-w_y (1 - p_y)^beta log p_y` with the
/// effective-number weight `w_y`; the cross-entropy variant drops the focal
/// factor (`beta = 0`).
pub fn class_balanced(
    logits: &[f64],
    label: usize,
    stats: &ClassStats,
    gamma: f64,
    beta: f64,
    variant: CbVariant,
) -> Result<(f64, Vec<f64>)> {
    check_finite(logits)?;
    let w = effective_number_weight(gamma, stats.count(label))?;
    let beta = match variant {
        CbVariant::Focal => beta,
        CbVariant::CrossEntropy => 0.0,
    };
    let p = stable_softmax(logits);
    let p_y = p[label];
    let u = 1.0 - p_y;
    let log_p = log_floored(p_y);

    let value = if beta == 0.0 {
        -w * log_p
    } else {
        -w * u.powf(beta) * log_p
    };

    // dL/dp_y, then chain through dp_y/dz_j = p_y (delta_jy - p_j).
    let dl_dp = if beta == 0.0 {
        -w / p_y.max(LOG_FLOOR)
    } else {
        w * (beta * u.powf(beta - 1.0) * log_p - u.powf(beta) / p_y.max(LOG_FLOOR))
    };
    let grad = (0..logits.len())
        .map(|j| {
            let delta = if j == label { 1.0 } else { 0.0 };
            dl_dp * p_y * (delta - p[j])
        })
        .collect();
    Ok((value, grad))
}

/// Balanced softmax: cross-entropy on logits shifted by the log label
/// frequencies, `-log(pi_y e^{z_y} / sum_j pi_j e^{z_j})`.
pub fn balanced_softmax(
    logits: &[f64],
    label: usize,
    stats: &ClassStats,
) -> Result<(f64, Vec<f64>)> {
    check_finite(logits)?;
    if logits.len() != stats.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: stats.num_classes(),
            got: logits.len(),
        });
    }
    if let Some(class) = stats.frequencies().iter().position(|&f| f <= 0.0) {
        return Err(Error::ZeroFrequency { class });
    }
    let shifted: Vec<f64> = logits
        .iter()
        .zip(stats.frequencies())
        .map(|(z, pi)| z + pi.ln())
        .collect();
    softmax_ce(&shifted, label)
}

/// How the influence term of the influence-balanced loss is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfluenceMode {
    /// Final-layer weight-gradient magnitude: `|p - onehot|_1 * |features|_1`.
    WeightGradient,
    /// Logit-gradient magnitude only: `|p - onehot|_1` (equals `2 (1 - p_y)`).
    LogitOnly,
}

/// Influence-balanced loss: cross-entropy down-weighted by the sample's
/// influence, `CE / (pi_y * max(influence, epsilon))`. The influence factor is
/// treated as a constant (no gradient flows through it).
pub fn influence_balanced(
    logits: &[f64],
    label: usize,
    stats: &ClassStats,
    features: &[f64],
    epsilon: f64,
    mode: InfluenceMode,
) -> Result<(f64, Vec<f64>)> {
    check_finite(logits)?;
    if features.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite { what: "features" });
    }
    let p = stable_softmax(logits);
    let grad_l1: f64 = p
        .iter()
        .enumerate()
        .map(|(j, pj)| if j == label { (pj - 1.0).abs() } else { *pj })
        .sum();
    let influence = match mode {
        InfluenceMode::WeightGradient => {
            let feat_l1: f64 = features.iter().map(|f| f.abs()).sum();
            grad_l1 * feat_l1
        }
        InfluenceMode::LogitOnly => grad_l1,
    };
    let pi = stats.frequency(label);
    if pi <= 0.0 {
        return Err(Error::ZeroFrequency { class: label });
    }
    let w = 1.0 / (pi * influence.max(epsilon));
    let value = -w * log_floored(p[label]);
    let grad = (0..logits.len())
        .map(|j| {
            let delta = if j == label { 1.0 } else { 0.0 };
            w * (p[j] - delta)
        })
        .collect();
    Ok((value, grad))
}

/// Focal regression loss for one sample: `sigmoid(beta |e|)^gamma * |e|` with
/// `e = predicted - target`. Returns the value and the derivative with
/// respect to the prediction.
pub fn focal_r(predicted: f64, target: f64, beta: f64, gamma: f64) -> Result<(f64, f64)> {
    if !predicted.is_finite() || !target.is_finite() {
        return Err(Error::NonFinite { what: "focal_r inputs" });
    }
    if beta < 0.0 || gamma < 0.0 {
        return Err(Error::InvalidHyper {
            name: "beta/gamma",
            value: beta.min(gamma),
            requirement: "focal regression needs beta, gamma >= 0",
        });
    }
    let e = predicted - target;
    let a = e.abs();
    let sig = sigmoid(beta * a);
    let value = sig.powf(gamma) * a;
    // d/da [sigmoid(beta a)^gamma * a]
    //   = sigmoid^gamma + a * gamma * sigmoid^(gamma-1) * sigmoid' * beta
    let dv_da = if gamma == 0.0 {
        1.0
    } else {
        sig.powf(gamma) + a * gamma * sig.powf(gamma - 1.0) * sig * (1.0 - sig) * beta
    };
    let grad = e.signum() * dv_da;
    Ok((value, if e == 0.0 { 0.0 } else { grad }))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let ex = x.exp();
        ex / (1.0 + ex)
    }
}

/// Distillation loss mixing the hard label with a teacher distribution:
/// `(1 - lambda) CE(s, y) + lambda KL(t || s)`; gradient
/// `(1 - lambda)(s - onehot(y)) + lambda (s - t)`.
pub fn dive_kd(
    student_logits: &[f64],
    teacher_probs: &[f64],
    label: usize,
    lambda_kd: f64,
) -> Result<(f64, Vec<f64>)> {
    check_finite(student_logits)?;
    if student_logits.len() != teacher_probs.len() {
        return Err(Error::DimensionMismatch {
            expected: student_logits.len(),
            got: teacher_probs.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda_kd) {
        return Err(Error::InvalidHyper {
            name: "lambda_kd",
            value: lambda_kd,
            requirement: "distillation trade-off must lie in [0, 1]",
        });
    }
    let sum: f64 = teacher_probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || teacher_probs.iter().any(|&t| t < 0.0) {
        return Err(Error::InvalidDistribution { sum });
    }
    let s = stable_softmax(student_logits);
    let ce = -log_floored(s[label]);
    let kl: f64 = teacher_probs
        .iter()
        .zip(&s)
        .map(|(t, sk)| {
            if *t > 0.0 {
                t * (t.ln() - log_floored(*sk))
            } else {
                0.0
            }
        })
        .sum();
    let value = (1.0 - lambda_kd) * ce + lambda_kd * kl;
    let grad = (0..s.len())
        .map(|j| {
            let delta = if j == label { 1.0 } else { 0.0 };
            (1.0 - lambda_kd) * (s[j] - delta) + lambda_kd * (s[j] - teacher_probs[j])
        })
        .collect();
    Ok((value, grad))
}
