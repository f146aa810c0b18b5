//! The training loop and the evaluation entry point.
//!
//! Composes the sampler, the instance combiner and the loss into a
//! deterministic epoch loop with ADAM + linear warmup, deferred
//! re-weighting/re-sampling, two-stage decoupled training, and the optional
//! open-set head. All randomness is forked from the single run seed, so a
//! given configuration reproduces bit-identically.

use std::path::PathBuf;

use log::warn;
use ndarray::{Array2, ArrayView2};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    balanced_softmax, class_balanced, cost_sensitive, dive_kd, focal_r, influence_balanced,
    softmax_ce, softmax_ce_soft, stable_softmax, CbVariant, InfluenceMode, LossKind, LossSpec,
};
use crate::metrics::{
    auprc, auroc, balanced_accuracy, balanced_f1, classification_report, regression_metrics,
    MetricReport, SubsetMetric,
};
use crate::nn::adam::{adam_step, AdamConfig, OptimizerState};
use crate::nn::heads::{argmax, cdt_logits, cdt_temperatures, open_decision, oltr_fit_centroids, OpenHead};
use crate::nn::mlp::{MlpModel, ModelGrads};
use crate::rng::RngState;
use crate::sampling::{
    bbn_combine, mixup_combine, remix_combine, sample_batch, CombinerKind, CombinerSpec,
    SamplerKind, SamplerSpec,
};
use crate::smoothing::{
    bin_labels, fds_calibrate, fds_calibration_scale, fds_statistics, lds_smooth, lds_weights,
    BinStrategy, KernelSpec,
};
use crate::splits::SplitResult;
use crate::stats::{build_class_stats, ClassStats, Tier};

/// Imbalanced-learning setting under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    ImbalancedClassification,
    LtClassification,
    OpenLt,
    ImbalancedRegression,
}

impl TaskKind {
    pub fn is_regression(self) -> bool {
        matches!(self, TaskKind::ImbalancedRegression)
    }
}

/// Deferred re-weighting / re-sampling switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoStage {
    pub drw: bool,
    pub drs: bool,
    pub start_epoch: usize,
}

impl Default for TwoStage {
    fn default() -> Self {
        Self {
            drw: false,
            drs: false,
            start_epoch: 10,
        }
    }
}

/// Loss for the regression head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegressionLoss {
    SquaredError,
    AbsoluteError,
    Focal { beta: f64, gamma: f64 },
}

/// Regression-specific options: label binning plus the optional label and
/// feature distribution smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionOptions {
    pub bins: usize,
    pub strategy: BinStrategy,
    /// Re-weight sample losses by the inverse kernel-smoothed label density.
    pub lds: Option<KernelSpec>,
    /// Calibrate penultimate features with kernel-smoothed bin statistics,
    /// refreshed once per epoch.
    pub fds: Option<KernelSpec>,
    pub fds_eps: f64,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self {
            bins: 50,
            strategy: BinStrategy::EqualWidth,
            lds: None,
            fds: None,
            fds_eps: 1e-8,
        }
    }
}

/// Everything the trainer needs beyond the dataset and the split.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_dims: Vec<usize>,
    pub loss: LossSpec,
    pub regression_loss: RegressionLoss,
    pub sampler: SamplerKind,
    pub combiner: CombinerSpec,
    pub optimizer: AdamConfig,
    pub two_stage: TwoStage,
    /// Decoupled training: stage-2 epoch count (classifier-only retraining
    /// with class-balanced sampling on a frozen encoder).
    pub decouple_stage2_epochs: Option<usize>,
    /// Class-dependent temperatures applied inside the training softmax.
    pub cdt_gamma: Option<f64>,
    /// Fit a centroid open-set head after training, with this reachability
    /// percentile.
    pub open_percentile: Option<f64>,
    pub regression: RegressionOptions,
    pub seed: u64,
    /// Cache path for the distillation teacher checkpoint.
    pub teacher_cache: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            hidden_dims: vec![64, 32],
            loss: LossSpec::new(LossKind::CrossEntropy),
            regression_loss: RegressionLoss::SquaredError,
            sampler: SamplerKind::InstanceBalanced,
            combiner: CombinerSpec::none(),
            optimizer: AdamConfig::default(),
            two_stage: TwoStage::default(),
            decouple_stage2_epochs: None,
            cdt_gamma: None,
            open_percentile: None,
            regression: RegressionOptions::default(),
            seed: 0,
            teacher_cache: None,
        }
    }
}

/// Mapping between original class ids and the contiguous training ids
/// (identical when no class is held out).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    closed: Vec<usize>,
}

impl ClassMap {
    /// Classes present in the training indices, ascending.
    pub fn from_split(dataset: &Dataset, split: &SplitResult) -> Result<ClassMap> {
        let (labels, _) = dataset.categorical_labels()?;
        let mut seen: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.is_empty() {
            return Err(Error::EmptyLabels);
        }
        Ok(ClassMap { closed: seen })
    }

    pub fn num_closed(&self) -> usize {
        self.closed.len()
    }

    /// Contiguous id of an original class, or None for a held-out class.
    pub fn to_contiguous(&self, original: usize) -> Option<usize> {
        self.closed.binary_search(&original).ok()
    }

    /// The extra label used for open samples.
    pub fn open_label(&self) -> usize {
        self.closed.len()
    }

    pub fn closed_classes(&self) -> &[usize] {
        &self.closed
    }
}

/// One history row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation balanced accuracy (classification) or MAE (regression);
    /// NaN when the validation set is empty.
    pub valid_metric: f64,
    pub lr: f64,
}

/// Trained model plus everything needed to evaluate and persist it.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: MlpModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub open_head: Option<OpenHead>,
    pub class_map: Option<ClassMap>,
}

/// Train an MLP on the split's training indices.
pub fn train(dataset: &Dataset, split: &SplitResult, opts: &TrainOptions) -> Result<TrainOutput> {
    opts.loss.validate()?;
    opts.combiner.validate()?;
    if split.train.iter().any(|&i| i >= dataset.len()) {
        return Err(Error::InvalidPlan("split indices out of range".into()));
    }
    if dataset.labels().is_categorical() {
        train_classification(dataset, split, opts)
    } else {
        train_regression(dataset, split, opts)
    }
}

struct BatchGrads {
    grads: ModelGrads,
    mean_loss: f64,
}

fn gather_rows(dataset: &Dataset, indices: &[usize]) -> Array2<f64> {
    let d = dataset.dim();
    let mut out = Array2::zeros((indices.len(), d));
    for (row, &i) in indices.iter().enumerate() {
        out.row_mut(row).assign(&dataset.feature_row(i));
    }
    out
}

fn train_classification(
    dataset: &Dataset,
    split: &SplitResult,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    let (labels, _) = dataset.categorical_labels()?;
    let class_map = ClassMap::from_split(dataset, split)?;
    let k = class_map.num_closed();
    let mapped: Vec<usize> = split
        .train
        .iter()
        .map(|&i| class_map.to_contiguous(labels[i]).expect("train labels are closed"))
        .collect();
    let stats = build_class_stats(&mapped, k)?;
    let mut class_indices: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (&dataset_index, &class) in split.train.iter().zip(&mapped) {
        class_indices[class].push(dataset_index);
    }

    let root = RngState::new(opts.seed);
    let mut model = MlpModel::init(
        dataset.dim(),
        &opts.hidden_dims,
        k,
        &mut root.fork_named("init"),
    );
    if matches!(opts.combiner.kind, CombinerKind::Bbn) {
        model = model.with_bbn_head(&mut root.fork_named("bbn-head"));
    }

    // Distillation teacher: a class-balanced cross-entropy model under the
    // same configuration, cached to disk when a path is available.
    let teacher = if matches!(opts.loss.kind, LossKind::Dive) {
        Some(prepare_teacher(dataset, split, opts)?)
    } else {
        None
    };

    let temperatures = match opts.cdt_gamma {
        Some(gamma) => Some(cdt_temperatures(&stats, gamma)?),
        None => None,
    };

    let mut optimizer = OptimizerState::new(&model);
    let mut sampler_rng = root.fork_named("sampler");
    let mut combiner_rng = root.fork_named("combiner");
    let mut history = Vec::with_capacity(opts.epochs);
    let mut best: Option<(usize, f64, MlpModel)> = None;

    let n_train = split.train.len();
    if n_train == 0 {
        return Err(Error::EmptyInput);
    }
    let batches_per_epoch = n_train.div_ceil(opts.batch_size);

    // Deferred re-weighting also covers the influence-balanced fine-tuning
    // protocol: plain CE until start_epoch, the configured loss afterwards.
    let deferred_loss =
        opts.two_stage.drw || matches!(opts.loss.kind, LossKind::InfluenceBalanced);

    let mut last_finite_loss = f64::NAN;
    for epoch in 0..opts.epochs {
        let lr_mult = opts.optimizer.warmup_multiplier(epoch);
        let loss_spec = if deferred_loss && epoch < opts.two_stage.start_epoch {
            LossSpec::new(LossKind::CrossEntropy)
        } else {
            opts.loss
        };
        let sampler_kind = effective_sampler(opts, epoch);
        let sampler = SamplerSpec::new(sampler_kind, epoch.min(opts.epochs), opts.epochs.max(1))?;

        let mut epoch_loss = 0.0;
        for _ in 0..batches_per_epoch {
            let batch = classification_batch(
                dataset,
                &class_map,
                &stats,
                &class_indices,
                &sampler,
                &loss_spec,
                opts,
                &model,
                teacher.as_ref(),
                temperatures.as_deref(),
                epoch,
                &mut sampler_rng,
                &mut combiner_rng,
            )
            .map_err(|e| diverged_on_non_finite(e, epoch, last_finite_loss))?;
            if !batch.mean_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_loss: last_finite_loss,
                });
            }
            last_finite_loss = batch.mean_loss;
            epoch_loss += batch.mean_loss;
            adam_step(
                &mut optimizer,
                &mut model,
                &batch.grads,
                &opts.optimizer,
                lr_mult,
                false,
            )
            .map_err(|e| diverged_on_non_finite(e, epoch, last_finite_loss))?;
        }
        let train_loss = epoch_loss / batches_per_epoch as f64;
        let valid_metric = validation_balanced_accuracy(dataset, split, &class_map, &model)?;
        if let Some(v) = finite(valid_metric) {
            if best.as_ref().map_or(true, |(_, b, _)| v >= *b) {
                best = Some((epoch, v, model.clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_metric,
            lr: opts.optimizer.learning_rate * lr_mult,
        });
    }

    // Decoupled training stage 2: classifier-only retraining with
    // class-balanced sampling on the frozen encoder.
    if let Some(stage2_epochs) = opts.decouple_stage2_epochs {
        let frozen = model.encoder_fingerprint();
        let mut stage2_optimizer = OptimizerState::new(&model);
        for offset in 0..stage2_epochs {
            let epoch = opts.epochs + offset;
            let lr_mult = opts.optimizer.warmup_multiplier(epoch);
            let sampler = SamplerSpec::new(SamplerKind::ClassBalanced, 0, 1)?;
            let mut epoch_loss = 0.0;
            for _ in 0..batches_per_epoch {
                let batch = classification_batch(
                    dataset,
                    &class_map,
                    &stats,
                    &class_indices,
                    &sampler,
                    &opts.loss,
                    opts,
                    &model,
                    teacher.as_ref(),
                    temperatures.as_deref(),
                    epoch,
                    &mut sampler_rng,
                    &mut combiner_rng,
                )
                .map_err(|e| diverged_on_non_finite(e, epoch, last_finite_loss))?;
                if !batch.mean_loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        last_loss: last_finite_loss,
                    });
                }
                last_finite_loss = batch.mean_loss;
                epoch_loss += batch.mean_loss;
                adam_step(
                    &mut stage2_optimizer,
                    &mut model,
                    &batch.grads,
                    &opts.optimizer,
                    lr_mult,
                    true,
                )
                .map_err(|e| diverged_on_non_finite(e, epoch, last_finite_loss))?;
            }
            debug_assert_eq!(model.encoder_fingerprint(), frozen);
            let train_loss = epoch_loss / batches_per_epoch as f64;
            let valid_metric = validation_balanced_accuracy(dataset, split, &class_map, &model)?;
            if let Some(v) = finite(valid_metric) {
                if best.as_ref().map_or(true, |(_, b, _)| v >= *b) {
                    best = Some((epoch, v, model.clone()));
                }
            }
            history.push(EpochRecord {
                epoch,
                train_loss,
                valid_metric,
                lr: opts.optimizer.learning_rate * lr_mult,
            });
        }
        assert_eq!(
            model.encoder_fingerprint(),
            frozen,
            "stage-2 retraining must not touch the encoder"
        );
    }

    let best_epoch = best.as_ref().map(|(e, _, _)| *e);
    if let Some((_, _, best_model)) = best {
        model = best_model;
    }

    let open_head = match opts.open_percentile {
        Some(percentile) => {
            let features = gather_rows(dataset, &split.train);
            let pass = model.encoder_forward(features.view())?;
            let h = pass.penultimate(&features);
            Some(oltr_fit_centroids(h.view(), &mapped, k, percentile)?)
        }
        None => None,
    };

    Ok(TrainOutput {
        model,
        history,
        best_epoch,
        open_head,
        class_map: Some(class_map),
    })
}

/// Non-finite values surfacing anywhere in a training step mean the run has
/// diverged; report the abort with the last finite loss.
fn diverged_on_non_finite(e: Error, epoch: usize, last_finite_loss: f64) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged {
            epoch,
            last_loss: last_finite_loss,
        },
        other => other,
    }
}

fn effective_sampler(opts: &TrainOptions, epoch: usize) -> SamplerKind {
    if opts.decouple_stage2_epochs.is_some() {
        // Stage 1 of decoupled training always learns representations with
        // instance-balanced sampling.
        return SamplerKind::InstanceBalanced;
    }
    if opts.two_stage.drs {
        if epoch < opts.two_stage.start_epoch {
            SamplerKind::InstanceBalanced
        } else {
            SamplerKind::ClassBalanced
        }
    } else {
        opts.sampler
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[allow(clippy::too_many_arguments)]
fn classification_batch(
    dataset: &Dataset,
    class_map: &ClassMap,
    stats: &ClassStats,
    class_indices: &[Vec<usize>],
    sampler: &SamplerSpec,
    loss_spec: &LossSpec,
    opts: &TrainOptions,
    model: &MlpModel,
    teacher: Option<&MlpModel>,
    temperatures: Option<&[f64]>,
    epoch: usize,
    sampler_rng: &mut RngState,
    combiner_rng: &mut RngState,
) -> Result<BatchGrads> {
    let (labels, _) = dataset.categorical_labels()?;
    let indices = sample_batch(sampler, stats, class_indices, opts.batch_size, sampler_rng)?;
    let y: Vec<usize> = indices
        .iter()
        .map(|&i| class_map.to_contiguous(labels[i]).expect("closed class"))
        .collect();
    let x = gather_rows(dataset, &indices);

    match opts.combiner.kind {
        CombinerKind::None => plain_batch(
            &x,
            &y,
            stats,
            loss_spec,
            model,
            teacher,
            temperatures,
        ),
        CombinerKind::Mixup | CombinerKind::Remix => manifold_mix_batch(
            &x,
            &y,
            stats,
            opts,
            model,
            combiner_rng,
        ),
        CombinerKind::Bbn => {
            let reversed = SamplerSpec::new(SamplerKind::Reversed, 0, 1)?;
            let rebal_indices =
                sample_batch(&reversed, stats, class_indices, opts.batch_size, sampler_rng)?;
            let y_r: Vec<usize> = rebal_indices
                .iter()
                .map(|&i| class_map.to_contiguous(labels[i]).expect("closed class"))
                .collect();
            let x_r = gather_rows(dataset, &rebal_indices);
            let beta = opts.combiner.bbn_schedule.beta(epoch, opts.epochs.max(1));
            bbn_batch(&x, &y, &x_r, &y_r, beta, model)
        }
    }
}

/// Per-sample losses on the head logits (optionally tempered), mean-reduced.
fn plain_batch(
    x: &Array2<f64>,
    y: &[usize],
    stats: &ClassStats,
    loss_spec: &LossSpec,
    model: &MlpModel,
    teacher: Option<&MlpModel>,
    temperatures: Option<&[f64]>,
) -> Result<BatchGrads> {
    let batch = x.nrows() as f64;
    let pass = model.encoder_forward(x.view())?;
    let h = pass.penultimate(x);
    let logits = model.head.forward(h.view())?;
    let teacher_probs = match teacher {
        Some(t) => Some(t.inference_logits(x.view())?),
        None => None,
    };

    let mut grad_logits = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for row in 0..x.nrows() {
        let raw: Vec<f64> = logits.row(row).to_vec();
        let z = match temperatures {
            Some(temps) => cdt_logits(&raw, temps)?,
            None => raw,
        };
        let label = y[row];
        let (value, grad_z) = match loss_spec.kind {
            LossKind::CrossEntropy => softmax_ce(&z, label)?,
            LossKind::CostSensitive => cost_sensitive(&z, label, stats)?,
            LossKind::ClassBalancedFocal => class_balanced(
                &z,
                label,
                stats,
                loss_spec.gamma,
                loss_spec.beta,
                CbVariant::Focal,
            )?,
            LossKind::ClassBalancedCe => class_balanced(
                &z,
                label,
                stats,
                loss_spec.gamma,
                0.0,
                CbVariant::CrossEntropy,
            )?,
            LossKind::BalancedSoftmax => balanced_softmax(&z, label, stats)?,
            LossKind::InfluenceBalanced => {
                let features: Vec<f64> = h.row(row).to_vec();
                influence_balanced(
                    &z,
                    label,
                    stats,
                    &features,
                    loss_spec.epsilon,
                    InfluenceMode::WeightGradient,
                )?
            }
            LossKind::Dive => {
                let t_logits = teacher_probs.as_ref().expect("teacher prepared");
                let t_row: Vec<f64> = t_logits.row(row).to_vec();
                let t_probs = stable_softmax(&t_row);
                dive_kd(&z, &t_probs, label, loss_spec.lambda_kd)?
            }
            LossKind::FocalR => {
                return Err(Error::SettingLabelMismatch {
                    setting: "focal regression loss",
                    label_kind: "categorical",
                })
            }
        };
        total += value;
        for (c, g) in grad_z.iter().enumerate() {
            // Chain through the temperature division, then the batch mean.
            let scale = temperatures.map_or(1.0, |temps| 1.0 / temps[c]);
            grad_logits[(row, c)] = g * scale / batch;
        }
    }

    let (head_grad, grad_h) = MlpModel::head_backward(&model.head, h.view(), grad_logits.view())?;
    let hidden = model.encoder_backward(x.view(), &pass, grad_h)?;
    Ok(BatchGrads {
        grads: ModelGrads {
            hidden,
            head: head_grad,
            bbn_head: None,
        },
        mean_loss: total / batch,
    })
}

/// Manifold mixing: interpolate the penultimate representations of the batch
/// with a seeded permutation of itself, train on the soft labels.
fn manifold_mix_batch(
    x: &Array2<f64>,
    y: &[usize],
    stats: &ClassStats,
    opts: &TrainOptions,
    model: &MlpModel,
    rng: &mut RngState,
) -> Result<BatchGrads> {
    let batch = x.nrows();
    let k = stats.num_classes();
    let pass = model.encoder_forward(x.view())?;
    let h = pass.penultimate(x);

    let mut partner: Vec<usize> = (0..batch).collect();
    rng.shuffle(&mut partner);

    let width = h.ncols();
    let mut mixed_h = Array2::zeros((batch, width));
    let mut soft_targets = Array2::zeros((batch, k));
    let mut lambda_x = vec![0.0; batch];
    for i in 0..batch {
        let j = partner[i];
        let h_i: Vec<f64> = h.row(i).to_vec();
        let h_j: Vec<f64> = h.row(j).to_vec();
        let mut y_i = vec![0.0; k];
        y_i[y[i]] = 1.0;
        let mut y_j = vec![0.0; k];
        y_j[y[j]] = 1.0;
        let (hm, ym, lx) = match opts.combiner.kind {
            CombinerKind::Mixup => {
                let (hm, ym, l) = mixup_combine(&h_i, &h_j, &y_i, &y_j, opts.combiner.alpha, rng)?;
                (hm, ym, l)
            }
            CombinerKind::Remix => {
                let (hm, ym, (lx, _)) = remix_combine(
                    &h_i,
                    &h_j,
                    &y_i,
                    &y_j,
                    stats.count(y[i]),
                    stats.count(y[j]),
                    opts.combiner.alpha,
                    opts.combiner.kappa,
                    opts.combiner.tau,
                    rng,
                )?;
                (hm, ym, lx)
            }
            _ => unreachable!("manifold path only handles mixup and remix"),
        };
        for (c, v) in hm.iter().enumerate() {
            mixed_h[(i, c)] = *v;
        }
        for (c, v) in ym.iter().enumerate() {
            soft_targets[(i, c)] = *v;
        }
        lambda_x[i] = lx;
    }

    let logits = model.head.forward(mixed_h.view())?;
    let mut grad_logits = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for row in 0..batch {
        let z: Vec<f64> = logits.row(row).to_vec();
        let target: Vec<f64> = soft_targets.row(row).to_vec();
        let (value, grad) = softmax_ce_soft(&z, &target)?;
        total += value;
        for (c, g) in grad.iter().enumerate() {
            grad_logits[(row, c)] = g / batch as f64;
        }
    }

    let (head_grad, grad_mixed) =
        MlpModel::head_backward(&model.head, mixed_h.view(), grad_logits.view())?;
    // Gradients flow into both parents of each mixed representation.
    let mut grad_h = Array2::zeros((batch, width));
    for i in 0..batch {
        let j = partner[i];
        for c in 0..width {
            grad_h[(i, c)] += lambda_x[i] * grad_mixed[(i, c)];
            grad_h[(j, c)] += (1.0 - lambda_x[i]) * grad_mixed[(i, c)];
        }
    }
    let hidden = model.encoder_backward(x.view(), &pass, grad_h)?;
    Ok(BatchGrads {
        grads: ModelGrads {
            hidden,
            head: head_grad,
            bbn_head: None,
        },
        mean_loss: total / batch as f64,
    })
}

/// Dual-branch training step: the conventional batch feeds the first head,
/// the reversed-sampler batch feeds the second, and their logits are mixed
/// with the epoch-scheduled trade-off.
fn bbn_batch(
    x_c: &Array2<f64>,
    y_c: &[usize],
    x_r: &Array2<f64>,
    y_r: &[usize],
    beta: f64,
    model: &MlpModel,
) -> Result<BatchGrads> {
    let second = model.bbn_head.as_ref().ok_or(Error::ShapeMismatch {
        where_: "bbn batch",
        expected: "a model with a second head".into(),
        got: "single-head model".into(),
    })?;
    let batch = x_c.nrows() as f64;

    let pass_c = model.encoder_forward(x_c.view())?;
    let h_c = pass_c.penultimate(x_c);
    let logits_c = model.head.forward(h_c.view())?;
    let pass_r = model.encoder_forward(x_r.view())?;
    let h_r = pass_r.penultimate(x_r);
    let logits_r = second.forward(h_r.view())?;

    let mut grad_c = Array2::zeros(logits_c.raw_dim());
    let mut grad_r = Array2::zeros(logits_r.raw_dim());
    let mut total = 0.0;
    for row in 0..x_c.nrows() {
        let zc: Vec<f64> = logits_c.row(row).to_vec();
        let zr: Vec<f64> = logits_r.row(row).to_vec();
        let combined = bbn_combine(&zc, &zr, y_c[row], y_r[row], beta)?;
        total += combined.loss;
        for (c, g) in combined.grad_logits.iter().enumerate() {
            grad_c[(row, c)] = beta * g / batch;
            grad_r[(row, c)] = (1.0 - beta) * g / batch;
        }
    }

    let (head_grad, grad_h_c) = MlpModel::head_backward(&model.head, h_c.view(), grad_c.view())?;
    let (bbn_grad, grad_h_r) = MlpModel::head_backward(second, h_r.view(), grad_r.view())?;
    let mut hidden = model.encoder_backward(x_c.view(), &pass_c, grad_h_c)?;
    let hidden_r = model.encoder_backward(x_r.view(), &pass_r, grad_h_r)?;
    for (a, b) in hidden.iter_mut().zip(&hidden_r) {
        a.add(b);
    }
    Ok(BatchGrads {
        grads: ModelGrads {
            hidden,
            head: head_grad,
            bbn_head: Some(bbn_grad),
        },
        mean_loss: total / batch,
    })
}

/// Validation balanced accuracy over the classes present in the validation
/// set (classes absent from it are skipped). NaN for an empty validation set.
fn validation_balanced_accuracy(
    dataset: &Dataset,
    split: &SplitResult,
    class_map: &ClassMap,
    model: &MlpModel,
) -> Result<f64> {
    if split.valid.is_empty() {
        return Ok(f64::NAN);
    }
    let (labels, _) = dataset.categorical_labels()?;
    let x = gather_rows(dataset, &split.valid);
    let logits = model.inference_logits(x.view())?;
    let k = class_map.num_closed();
    let mut correct = vec![0u64; k];
    let mut support = vec![0u64; k];
    for (row, &i) in split.valid.iter().enumerate() {
        let Some(truth) = class_map.to_contiguous(labels[i]) else {
            continue;
        };
        let pred = argmax(&logits.row(row).to_vec());
        support[truth] += 1;
        if pred == truth {
            correct[truth] += 1;
        }
    }
    let mut total = 0.0;
    let mut classes = 0.0;
    for class in 0..k {
        if support[class] > 0 {
            total += correct[class] as f64 / support[class] as f64;
            classes += 1.0;
        }
    }
    if classes == 0.0 {
        return Ok(f64::NAN);
    }
    Ok(total / classes)
}

fn prepare_teacher(
    dataset: &Dataset,
    split: &SplitResult,
    opts: &TrainOptions,
) -> Result<MlpModel> {
    if let Some(path) = &opts.teacher_cache {
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            let model = MlpModel::from_checkpoint_json(&text)?;
            if model.in_dim() == dataset.dim() {
                return Ok(model);
            }
            warn!("cached teacher has the wrong input width; retraining");
        }
    }
    let mut teacher_opts = opts.clone();
    teacher_opts.loss = LossSpec {
        kind: LossKind::ClassBalancedCe,
        ..opts.loss
    };
    teacher_opts.teacher_cache = None;
    teacher_opts.open_percentile = None;
    let output = train_classification(dataset, split, &teacher_opts)?;
    if let Some(path) = &opts.teacher_cache {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, output.model.to_checkpoint_json())?;
    }
    Ok(output.model)
}

fn train_regression(
    dataset: &Dataset,
    split: &SplitResult,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    let targets = dataset.continuous_labels()?;
    if !matches!(opts.sampler, SamplerKind::InstanceBalanced) {
        return Err(Error::SettingLabelMismatch {
            setting: "class-aware sampling",
            label_kind: "continuous",
        });
    }
    if !matches!(opts.combiner.kind, CombinerKind::None) {
        return Err(Error::SettingLabelMismatch {
            setting: "instance combining",
            label_kind: "continuous",
        });
    }
    let n_train = split.train.len();
    if n_train == 0 {
        return Err(Error::EmptyInput);
    }

    let root = RngState::new(opts.seed);
    let mut model = MlpModel::init(
        dataset.dim(),
        &opts.hidden_dims,
        1,
        &mut root.fork_named("init"),
    );
    let mut optimizer = OptimizerState::new(&model);
    let mut sampler_rng = root.fork_named("sampler");
    let mut history = Vec::with_capacity(opts.epochs);
    let mut best: Option<(usize, f64, MlpModel)> = None;

    // Label binning feeds both smoothing methods.
    let train_targets: Vec<f64> = split.train.iter().map(|&i| targets[i]).collect();
    let smoothing_setup = if opts.regression.lds.is_some() || opts.regression.fds.is_some() {
        let (scheme, bins) =
            bin_labels(&train_targets, opts.regression.bins, opts.regression.strategy)?;
        Some((scheme, bins))
    } else {
        None
    };
    let sample_weights: Vec<f64> = match (&opts.regression.lds, &smoothing_setup) {
        (Some(kernel), Some((_, bins))) => {
            let mut counts = vec![0.0; opts.regression.bins];
            for &b in bins {
                counts[b] += 1.0;
            }
            let smoothed = lds_smooth(&counts, kernel)?;
            lds_weights(&smoothed, bins)?
        }
        _ => vec![1.0; n_train],
    };
    // Position of each dataset index within the training list.
    let mut train_position = std::collections::HashMap::new();
    for (pos, &i) in split.train.iter().enumerate() {
        train_position.insert(i, pos);
    }

    let batches_per_epoch = n_train.div_ceil(opts.batch_size);
    let mut last_finite_loss = f64::NAN;
    for epoch in 0..opts.epochs {
        let lr_mult = opts.optimizer.warmup_multiplier(epoch);

        // Feature distribution smoothing statistics from the current encoder.
        let fds_state = match (&opts.regression.fds, &smoothing_setup) {
            (Some(kernel), Some((_, bins))) => {
                let x_all = gather_rows(dataset, &split.train);
                let pass = model.encoder_forward(x_all.view())?;
                let h = pass.penultimate(&x_all);
                Some(fds_statistics(h.view(), bins, opts.regression.bins, kernel)?)
            }
            _ => None,
        };

        let mut epoch_loss = 0.0;
        for _ in 0..batches_per_epoch {
            let indices: Vec<usize> = (0..opts.batch_size)
                .map(|_| split.train[sampler_rng.index(n_train)])
                .collect();
            let x = gather_rows(dataset, &indices);
            let batch = x.nrows() as f64;
            let pass = model.encoder_forward(x.view())?;
            let h = pass.penultimate(&x).clone();

            // Optionally calibrate the representation per sample bin.
            let (h_used, calib_scale): (Array2<f64>, Option<Vec<Vec<f64>>>) =
                match (&fds_state, &smoothing_setup) {
                    (Some(stats), Some((scheme, _))) => {
                        let mut out = h.clone();
                        let mut scales = Vec::with_capacity(indices.len());
                        for (row, &i) in indices.iter().enumerate() {
                            let bin = scheme.assign(targets[i]);
                            let calibrated = fds_calibrate(
                                &h.row(row).to_vec(),
                                bin,
                                stats,
                                opts.regression.fds_eps,
                            )?;
                            for (c, v) in calibrated.iter().enumerate() {
                                out[(row, c)] = *v;
                            }
                            scales.push(fds_calibration_scale(stats, bin, opts.regression.fds_eps));
                        }
                        (out, Some(scales))
                    }
                    _ => (h.clone(), None),
                };

            let predictions = model.head.forward(h_used.view())?;
            let mut grad_out = Array2::zeros(predictions.raw_dim());
            let mut total = 0.0;
            for (row, &i) in indices.iter().enumerate() {
                let weight = train_position
                    .get(&i)
                    .map(|&pos| sample_weights[pos])
                    .unwrap_or(1.0);
                let predicted = predictions[(row, 0)];
                let target = targets[i];
                let (value, grad) = match opts.regression_loss {
                    RegressionLoss::SquaredError => {
                        let e = predicted - target;
                        (e * e, 2.0 * e)
                    }
                    RegressionLoss::AbsoluteError => {
                        let e = predicted - target;
                        (e.abs(), e.signum())
                    }
                    RegressionLoss::Focal { beta, gamma } => focal_r(predicted, target, beta, gamma)?,
                };
                total += weight * value;
                grad_out[(row, 0)] = weight * grad / batch;
            }
            let mean_loss = total / batch;
            if !mean_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_loss: last_finite_loss,
                });
            }
            last_finite_loss = mean_loss;
            epoch_loss += mean_loss;

            let (head_grad, mut grad_h) =
                MlpModel::head_backward(&model.head, h_used.view(), grad_out.view())?;
            if let Some(scales) = &calib_scale {
                for (row, scale) in scales.iter().enumerate() {
                    for (c, s) in scale.iter().enumerate() {
                        grad_h[(row, c)] *= s;
                    }
                }
            }
            let hidden = model.encoder_backward(x.view(), &pass, grad_h)?;
            adam_step(
                &mut optimizer,
                &mut model,
                &ModelGrads {
                    hidden,
                    head: head_grad,
                    bbn_head: None,
                },
                &opts.optimizer,
                lr_mult,
                false,
            )
            .map_err(|e| diverged_on_non_finite(e, epoch, last_finite_loss))?;
        }
        let train_loss = epoch_loss / batches_per_epoch as f64;
        let valid_metric = validation_mae(dataset, split, &model)?;
        if let Some(v) = finite(valid_metric) {
            if best.as_ref().map_or(true, |(_, b, _)| v <= *b) {
                best = Some((epoch, v, model.clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_metric,
            lr: opts.optimizer.learning_rate * lr_mult,
        });
    }

    let best_epoch = best.as_ref().map(|(e, _, _)| *e);
    if let Some((_, _, best_model)) = best {
        model = best_model;
    }
    Ok(TrainOutput {
        model,
        history,
        best_epoch,
        open_head: None,
        class_map: None,
    })
}

fn validation_mae(dataset: &Dataset, split: &SplitResult, model: &MlpModel) -> Result<f64> {
    if split.valid.is_empty() {
        return Ok(f64::NAN);
    }
    let targets = dataset.continuous_labels()?;
    let x = gather_rows(dataset, &split.valid);
    let predictions = model.inference_logits(x.view())?;
    let mae = split
        .valid
        .iter()
        .enumerate()
        .map(|(row, &i)| (predictions[(row, 0)] - targets[i]).abs())
        .sum::<f64>()
        / split.valid.len() as f64;
    Ok(mae)
}

/// Evaluation knobs that don't live in the model.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub split_name: String,
    pub seed: u64,
    /// Label bins for the regression head/middle/tail breakdown.
    pub regression_bins: usize,
    pub bin_strategy: BinStrategy,
}

impl Default for EvalContext {
    fn default() -> Self {
        Self {
            split_name: String::new(),
            seed: 0,
            regression_bins: 50,
            bin_strategy: BinStrategy::EqualWidth,
        }
    }
}

/// Evaluate a trained model on the split's test indices.
///
/// Classification settings report the balanced metrics, AUROC/AUPRC, the full
/// classical report and the head/middle/tail breakdown (tiers taken from the
/// training distribution). The open long-tail setting scores open samples as
/// an extra class `K` decided by the open-set head and adds an "open" subset.
/// Regression reports the error metrics plus a head/middle/tail breakdown
/// over label bins.
pub fn evaluate(
    model: &MlpModel,
    dataset: &Dataset,
    split: &SplitResult,
    setting: TaskKind,
    open_head: Option<&OpenHead>,
    ctx: &EvalContext,
) -> Result<MetricReport> {
    match setting {
        TaskKind::ImbalancedRegression => evaluate_regression(model, dataset, split, ctx),
        TaskKind::OpenLt => {
            let head = open_head.ok_or(Error::MissingOpenHead)?;
            evaluate_classification(model, dataset, split, Some(head), ctx)
        }
        TaskKind::ImbalancedClassification | TaskKind::LtClassification => {
            evaluate_classification(model, dataset, split, None, ctx)
        }
    }
}

fn evaluate_classification(
    model: &MlpModel,
    dataset: &Dataset,
    split: &SplitResult,
    open_head: Option<&OpenHead>,
    ctx: &EvalContext,
) -> Result<MetricReport> {
    let (labels, _) = dataset.categorical_labels()?;
    let class_map = ClassMap::from_split(dataset, split)?;
    let k = class_map.num_closed();

    // Tier partition from the training distribution.
    let mapped_train: Vec<usize> = split
        .train
        .iter()
        .map(|&i| class_map.to_contiguous(labels[i]).expect("closed class"))
        .collect();
    let train_stats = build_class_stats(&mapped_train, k)?;

    let mut truth = Vec::with_capacity(split.test.len());
    let mut rows = Vec::with_capacity(split.test.len());
    for &i in &split.test {
        match class_map.to_contiguous(labels[i]) {
            Some(class) => {
                truth.push(class);
                rows.push(i);
            }
            None if open_head.is_some() => {
                truth.push(class_map.open_label());
                rows.push(i);
            }
            None => {
                warn!(
                    "test sample {i} has class {} unseen in training; skipped",
                    labels[i]
                );
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let x = gather_rows(dataset, &rows);
    let pass = model.encoder_forward(x.view())?;
    let h = pass.penultimate(&x);
    let mut logits = model.head.forward(h.view())?;
    if let Some(second) = &model.bbn_head {
        let other = second.forward(h.view())?;
        logits = (logits + other) * 0.5;
    }

    let has_open = open_head.is_some() && truth.iter().any(|&t| t == class_map.open_label());
    let cm_classes = if has_open { k + 1 } else { k };
    let mut predictions = Vec::with_capacity(rows.len());
    let mut probs = Array2::zeros((rows.len(), k));
    for row in 0..rows.len() {
        let z: Vec<f64> = logits.row(row).to_vec();
        let p = stable_softmax(&z);
        for (c, v) in p.iter().enumerate() {
            probs[(row, c)] = *v;
        }
        let pred = match open_head {
            Some(head) => {
                let decided = open_decision(head, h.row(row), &z);
                if decided == class_map.open_label() && !has_open {
                    // No open class exists in this split; fall back to the
                    // closed-set argmax.
                    argmax(&z)
                } else {
                    decided
                }
            }
            None => argmax(&z),
        };
        predictions.push(pred);
    }

    let cm = crate::confusion::confusion_from_predictions(&truth, &predictions, cm_classes)?;

    let mut report = MetricReport::new();
    // Balanced metrics over classes with test support; strict values when all
    // classes are present.
    let supported: Vec<usize> = (0..cm_classes).filter(|&c| cm.row_sum(c) > 0).collect();
    if supported.len() == cm_classes {
        report.insert("balanced_accuracy", balanced_accuracy(&cm)?);
        report.insert("balanced_f1", balanced_f1(&cm, &cm.truth_stats()?)?);
    } else {
        warn!("some classes have no test samples; balanced metrics restricted");
        let ba = crate::metrics::classification::subset_metric_value(
            &cm,
            &supported,
            SubsetMetric::BalancedAccuracy,
        )?
        .unwrap_or(f64::NAN);
        let bf1 = crate::metrics::classification::subset_metric_value(
            &cm,
            &supported,
            SubsetMetric::BalancedF1,
        )?
        .unwrap_or(f64::NAN);
        report.insert("balanced_accuracy", ba);
        report.insert("balanced_f1", bf1);
    }
    match auroc(probs.view(), &truth) {
        Ok(v) => report.insert("auroc", v),
        Err(e) => warn!("auroc unavailable: {e}"),
    }
    match auprc(probs.view(), &truth) {
        Ok(v) => report.insert("auprc", v),
        Err(e) => warn!("auprc unavailable: {e}"),
    }
    report.absorb(&classification_report(&cm)?);

    // Head/middle/tail subsets, restricted to the closed classes.
    for metric in [
        SubsetMetric::BalancedAccuracy,
        SubsetMetric::BalancedF1,
        SubsetMetric::MacroF1,
        SubsetMetric::Accuracy,
    ] {
        for tier in [Tier::Head, Tier::Middle, Tier::Tail] {
            let classes = train_stats.classes_in_tier(tier);
            if classes.is_empty() {
                continue;
            }
            if let Some(value) =
                crate::metrics::classification::subset_metric_value(&cm, &classes, metric)?
            {
                let mut sub = report.subset(tier.name()).cloned().unwrap_or_default();
                sub.insert(metric.name(), value);
                sub.insert("class_count", classes.len() as f64);
                report.set_subset(tier.name(), sub);
            }
        }
    }
    if has_open {
        let open = class_map.open_label();
        let mut sub = MetricReport::new();
        let support = cm.row_sum(open);
        if support > 0 {
            sub.insert("recall", cm.get(open, open) as f64 / support as f64);
        }
        let predicted_open = cm.col_sum(open);
        if predicted_open > 0 {
            sub.insert(
                "precision",
                cm.get(open, open) as f64 / predicted_open as f64,
            );
        }
        sub.insert("sample_count", support as f64);
        report.set_subset("open", sub);
    }

    report.meta.split = Some(ctx.split_name.clone());
    report.meta.seed = Some(ctx.seed);
    report.meta.num_classes = Some(cm_classes);
    Ok(report)
}

fn evaluate_regression(
    model: &MlpModel,
    dataset: &Dataset,
    split: &SplitResult,
    ctx: &EvalContext,
) -> Result<MetricReport> {
    let targets = dataset.continuous_labels()?;
    if split.test.is_empty() {
        return Err(Error::EmptyInput);
    }
    let x = gather_rows(dataset, &split.test);
    let outputs = model.inference_logits(x.view())?;
    let predicted: Vec<f64> = (0..split.test.len()).map(|row| outputs[(row, 0)]).collect();
    let truth: Vec<f64> = split.test.iter().map(|&i| targets[i]).collect();
    let mut report = regression_metrics(&truth, &predicted)?;

    // Head/middle/tail over label bins of the training distribution.
    let train_targets: Vec<f64> = split.train.iter().map(|&i| targets[i]).collect();
    match bin_labels(&train_targets, ctx.regression_bins, ctx.bin_strategy) {
        Ok((scheme, train_bins)) => {
            let mut counts = vec![0usize; ctx.regression_bins];
            for &b in &train_bins {
                counts[b] += 1;
            }
            let tiers = bin_tiers(&counts);
            for tier in [Tier::Head, Tier::Middle, Tier::Tail] {
                let mut sub_t = Vec::new();
                let mut sub_p = Vec::new();
                for (pos, &i) in split.test.iter().enumerate() {
                    let bin = scheme.assign(targets[i]);
                    if tiers[bin] == tier {
                        sub_t.push(targets[i]);
                        sub_p.push(predicted[pos]);
                    }
                }
                if sub_t.is_empty() {
                    continue;
                }
                let n = sub_t.len() as f64;
                let mse = sub_t
                    .iter()
                    .zip(&sub_p)
                    .map(|(y, p)| (y - p) * (y - p))
                    .sum::<f64>()
                    / n;
                let mae = sub_t
                    .iter()
                    .zip(&sub_p)
                    .map(|(y, p)| (y - p).abs())
                    .sum::<f64>()
                    / n;
                let mut sub = MetricReport::new();
                sub.insert("mse", mse);
                sub.insert("mae", mae);
                sub.insert("sample_count", n);
                report.set_subset(tier.name(), sub);
            }
        }
        Err(e) => warn!("regression tier breakdown unavailable: {e}"),
    }

    report.meta.split = Some(ctx.split_name.clone());
    report.meta.seed = Some(ctx.seed);
    Ok(report)
}

/// Head/middle/tail tags for bins ranked by count (zero-count bins rank last
/// and therefore land in the tail).
fn bin_tiers(counts: &[usize]) -> Vec<Tier> {
    let num_bins = counts.len();
    let mut order: Vec<usize> = (0..num_bins).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut tiers = vec![Tier::Head; num_bins];
    if num_bins < 3 {
        return tiers;
    }
    let third = num_bins.div_ceil(3);
    for (rank, &bin) in order.iter().enumerate() {
        tiers[bin] = if rank < third {
            Tier::Head
        } else if rank < 2 * third {
            Tier::Middle
        } else {
            Tier::Tail
        };
    }
    tiers
}

/// Fit the centroid open-set head from a trained model's penultimate
/// features over the split's training indices.
pub fn fit_open_head(
    model: &MlpModel,
    dataset: &Dataset,
    split: &SplitResult,
    percentile: f64,
) -> Result<OpenHead> {
    let class_map = ClassMap::from_split(dataset, split)?;
    let (labels, _) = dataset.categorical_labels()?;
    let mapped: Vec<usize> = split
        .train
        .iter()
        .map(|&i| class_map.to_contiguous(labels[i]).expect("closed class"))
        .collect();
    let features = gather_rows(dataset, &split.train);
    let pass = model.encoder_forward(features.view())?;
    let h = pass.penultimate(&features);
    oltr_fit_centroids(h.view(), &mapped, class_map.num_closed(), percentile)
}

/// Softmax probabilities of the inference logits, one row per sample.
pub fn predict_probabilities(model: &MlpModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let logits = model.inference_logits(x)?;
    let mut probs = Array2::zeros(logits.raw_dim());
    for row in 0..logits.nrows() {
        let z: Vec<f64> = logits.row(row).to_vec();
        let p = stable_softmax(&z);
        for (c, v) in p.iter().enumerate() {
            probs[(row, c)] = *v;
        }
    }
    Ok(probs)
}
