//! ADAM with decoupled weight decay and a linear learning-rate warmup.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::{Linear, MlpModel, ModelGrads};

/// Optimizer hyperparameters. Defaults: learning rate 1e-3, momentum 0.9,
/// weight decay 2e-4, linear warmup from factor 0.01 over 20 epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub warmup_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 2e-4,
            warmup_epochs: 20,
            warmup_factor: 0.01,
        }
    }
}

impl AdamConfig {
    /// Learning-rate multiplier at an epoch: linear from `warmup_factor` at
    /// epoch 0 to 1 at the end of warmup, constant 1 afterwards.
    pub fn warmup_multiplier(&self, epoch: usize) -> f64 {
        if self.warmup_epochs == 0 || epoch >= self.warmup_epochs {
            1.0
        } else {
            self.warmup_factor
                + (1.0 - self.warmup_factor) * (epoch as f64 / self.warmup_epochs as f64)
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m_weight: Array2<f64>,
    v_weight: Array2<f64>,
    m_bias: Array1<f64>,
    v_bias: Array1<f64>,
}

impl Moments {
    fn zeros_like(layer: &Linear) -> Self {
        Self {
            m_weight: Array2::zeros(layer.weight.raw_dim()),
            v_weight: Array2::zeros(layer.weight.raw_dim()),
            m_bias: Array1::zeros(layer.bias.raw_dim()),
            v_bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }
}

/// First/second moment estimates for every model parameter plus the step
/// counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    hidden: Vec<Moments>,
    head: Moments,
    bbn_head: Option<Moments>,
    step: u64,
}

impl OptimizerState {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            hidden: model.hidden.iter().map(Moments::zeros_like).collect(),
            head: Moments::zeros_like(&model.head),
            bbn_head: model.bbn_head.as_ref().map(Moments::zeros_like),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One ADAM update over all (or only the head) parameters.
///
/// `lr_multiplier` scales the learning rate (warmup); `freeze_encoder` leaves
/// the hidden layers untouched. Decay is decoupled: it is applied directly to
/// the parameters, not folded into the gradient moments. Non-finite gradients
/// fail fast.
pub fn adam_step(
    state: &mut OptimizerState,
    model: &mut MlpModel,
    grads: &ModelGrads,
    config: &AdamConfig,
    lr_multiplier: f64,
    freeze_encoder: bool,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite { what: "gradients" });
    }
    state.step += 1;
    let t = state.step;
    if !freeze_encoder {
        for ((layer, moments), grad) in model
            .hidden
            .iter_mut()
            .zip(&mut state.hidden)
            .zip(&grads.hidden)
        {
            update_linear(layer, moments, &grad.weight, &grad.bias, config, lr_multiplier, t);
        }
    }
    update_linear(
        &mut model.head,
        &mut state.head,
        &grads.head.weight,
        &grads.head.bias,
        config,
        lr_multiplier,
        t,
    );
    if let (Some(layer), Some(moments), Some(grad)) = (
        model.bbn_head.as_mut(),
        state.bbn_head.as_mut(),
        grads.bbn_head.as_ref(),
    ) {
        update_linear(layer, moments, &grad.weight, &grad.bias, config, lr_multiplier, t);
    }
    Ok(())
}

fn update_linear(
    layer: &mut Linear,
    moments: &mut Moments,
    grad_weight: &Array2<f64>,
    grad_bias: &Array1<f64>,
    config: &AdamConfig,
    lr_multiplier: f64,
    t: u64,
) {
    let lr = config.learning_rate * lr_multiplier;
    let bias_correction1 = 1.0 - config.beta1.powi(t as i32);
    let bias_correction2 = 1.0 - config.beta2.powi(t as i32);

    moments.m_weight = &moments.m_weight * config.beta1 + grad_weight * (1.0 - config.beta1);
    moments.v_weight =
        &moments.v_weight * config.beta2 + &grad_weight.mapv(|g| g * g) * (1.0 - config.beta2);
    moments.m_bias = &moments.m_bias * config.beta1 + grad_bias * (1.0 - config.beta1);
    moments.v_bias =
        &moments.v_bias * config.beta2 + &grad_bias.mapv(|g| g * g) * (1.0 - config.beta2);

    ndarray::Zip::from(&mut layer.weight)
        .and(&moments.m_weight)
        .and(&moments.v_weight)
        .for_each(|w, &m, &v| {
            let m_hat = m / bias_correction1;
            let v_hat = v / bias_correction2;
            *w -= lr * (m_hat / (v_hat.sqrt() + config.eps) + config.weight_decay * *w);
        });
    ndarray::Zip::from(&mut layer.bias)
        .and(&moments.m_bias)
        .and(&moments.v_bias)
        .for_each(|b, &m, &v| {
            let m_hat = m / bias_correction1;
            let v_hat = v / bias_correction2;
            // Bias terms are not decayed.
            *b -= lr * m_hat / (v_hat.sqrt() + config.eps);
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::LinearGrad;
    use crate::rng::RngState;
    use ndarray::array;

    #[test]
    fn warmup_endpoints() {
        let config = AdamConfig::default();
        assert_eq!(config.warmup_multiplier(0), 0.01);
        assert_eq!(config.warmup_multiplier(20), 1.0);
        assert_eq!(config.warmup_multiplier(100), 1.0);
        let mid = config.warmup_multiplier(10);
        assert!((mid - (0.01 + 0.99 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_gradients_and_zero_decay_leave_params() {
        let mut rng = RngState::new(1);
        let mut model = MlpModel::init(2, &[3], 2, &mut rng);
        let before = model.clone();
        let mut state = OptimizerState::new(&model);
        let grads = ModelGrads::zeros_like(&model);
        let config = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        for _ in 0..5 {
            adam_step(&mut state, &mut model, &grads, &config, 1.0, false).unwrap();
        }
        assert_eq!(model, before);
    }

    #[test]
    fn non_finite_gradient_fails_fast() {
        let mut rng = RngState::new(1);
        let mut model = MlpModel::init(1, &[], 1, &mut rng);
        let mut state = OptimizerState::new(&model);
        let mut grads = ModelGrads::zeros_like(&model);
        grads.head.weight[(0, 0)] = f64::NAN;
        let config = AdamConfig::default();
        assert!(matches!(
            adam_step(&mut state, &mut model, &grads, &config, 1.0, false),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn scalar_quadratic_descends_monotonically_after_warmup() {
        // Minimize f(w) = w^2 via its gradient 2w on a 1x1 "model".
        let mut model = MlpModel {
            hidden: vec![],
            head: Linear {
                weight: array![[3.0]],
                bias: array![0.0],
            },
            bbn_head: None,
        };
        let mut state = OptimizerState::new(&model);
        let config = AdamConfig {
            learning_rate: 0.05,
            weight_decay: 0.0,
            warmup_epochs: 0,
            ..AdamConfig::default()
        };
        // The step size is bounded by the learning rate, so |w| shrinks
        // monotonically while it still dominates the step, and the iterate
        // ends up inside a few step sizes of the optimum.
        let mut prev = model.head.weight[(0, 0)].abs();
        for _ in 0..200 {
            let w = model.head.weight[(0, 0)];
            let grads = ModelGrads {
                hidden: vec![],
                head: LinearGrad {
                    weight: array![[2.0 * w]],
                    bias: array![0.0],
                },
                bbn_head: None,
            };
            adam_step(&mut state, &mut model, &grads, &config, 1.0, false).unwrap();
            let now = model.head.weight[(0, 0)].abs();
            if prev > 3.0 * config.learning_rate {
                assert!(now < prev, "|w| rose from {prev} to {now}");
            }
            prev = now;
        }
        assert!(prev < 3.0 * config.learning_rate);
    }

    #[test]
    fn freeze_encoder_skips_hidden_layers() {
        let mut rng = RngState::new(8);
        let mut model = MlpModel::init(2, &[4], 2, &mut rng);
        let fingerprint = model.encoder_fingerprint();
        let mut state = OptimizerState::new(&model);
        let mut grads = ModelGrads::zeros_like(&model);
        grads.hidden[0].weight.fill(1.0);
        grads.head.weight.fill(1.0);
        let config = AdamConfig::default();
        adam_step(&mut state, &mut model, &grads, &config, 1.0, true).unwrap();
        assert_eq!(model.encoder_fingerprint(), fingerprint);
    }
}
