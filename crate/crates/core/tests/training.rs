//! End-to-end trainer behavior: convergence, schedules, reproducibility,
//! the open-set head and the regression path.

use imlab_core::config::parse_config;
use imlab_core::data::{generate_synthetic_lt, SyntheticSpec};
use imlab_core::dataset::{Dataset, Labels};
use imlab_core::error::Error;
use imlab_core::losses::{LossKind, LossSpec};
use imlab_core::nn::heads::oltr_reachability;
use imlab_core::nn::trainer::{
    evaluate, fit_open_head, train, EvalContext, RegressionLoss, TaskKind, TrainOptions,
};
use imlab_core::nn::AdamConfig;
use imlab_core::rng::RngState;
use imlab_core::sampling::{CombinerKind, CombinerSpec, SamplerKind};
use imlab_core::smoothing::KernelSpec;
use imlab_core::splits::{split_dataset, SplitMethod, SplitPlan};

fn blobs(num_class: usize, imbalance: f64, n: usize, dim: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec::new(num_class, imbalance, n, dim);
    generate_synthetic_lt(&spec, &RngState::new(seed)).unwrap()
}

fn quick_options(epochs: usize, seed: u64) -> TrainOptions {
    TrainOptions {
        epochs,
        batch_size: 32,
        hidden_dims: vec![16],
        optimizer: AdamConfig {
            warmup_epochs: 3,
            ..AdamConfig::default()
        },
        seed,
        ..TrainOptions::default()
    }
}

fn random_plan(seed: u64) -> SplitPlan {
    SplitPlan::new(SplitMethod::Random, (0.7, 0.15, 0.15), seed)
}

#[test]
fn separable_blobs_reach_full_training_accuracy() {
    // Hand-placed two-class Gaussians ten sigmas apart are learnable within
    // 50 epochs.
    let mut rng = RngState::new(5);
    let n = 300;
    let dim = 8;
    let mut features = ndarray::Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= 220);
        let center = if class == 0 { -5.0 } else { 5.0 };
        for c in 0..dim {
            let offset = if c == 0 { center } else { 0.0 };
            features[(i, c)] = offset + rng.uniform() * 2.0 - 1.0;
        }
        labels.push(class);
    }
    let dataset = Dataset::new(
        features,
        Labels::Categorical {
            values: labels,
            num_classes: 2,
        },
        (0..n).map(|i| format!("b{i}")).collect(),
        None,
        None,
    )
    .unwrap();
    let split = split_dataset(&dataset, &random_plan(5)).unwrap();
    let output = train(&dataset, &split, &quick_options(50, 5)).unwrap();

    let (labels, _) = dataset.categorical_labels().unwrap();
    let mut correct = 0;
    for &i in &split.train {
        let x = dataset.features().select(ndarray::Axis(0), &[i]);
        let logits = output.model.inference_logits(x.view()).unwrap();
        let pred = imlab_core::nn::argmax(&logits.row(0).to_vec());
        if pred == labels[i] {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / split.train.len() as f64;
    assert!(
        accuracy > 0.999,
        "training accuracy {accuracy} below 1.0 on separable blobs"
    );
}

#[test]
fn epochs_zero_returns_initial_model_and_empty_history() {
    let dataset = blobs(3, 2.0, 120, 4, 1);
    let split = split_dataset(&dataset, &random_plan(1)).unwrap();
    let output = train(&dataset, &split, &quick_options(0, 1)).unwrap();
    assert!(output.history.is_empty());
    assert!(output.best_epoch.is_none());
    // Identical to a freshly initialized model under the same seed.
    let fresh = train(&dataset, &split, &quick_options(0, 1)).unwrap();
    assert_eq!(
        output.model.to_checkpoint_json(),
        fresh.model.to_checkpoint_json()
    );
}

#[test]
fn training_is_bit_reproducible() {
    let dataset = blobs(4, 10.0, 400, 8, 9);
    let split = split_dataset(&dataset, &random_plan(9)).unwrap();
    let mut options = quick_options(6, 33);
    options.loss = LossSpec::new(LossKind::BalancedSoftmax);
    let a = train(&dataset, &split, &options).unwrap();
    let b = train(&dataset, &split, &options).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.to_checkpoint_json(), b.model.to_checkpoint_json());
}

#[test]
fn drw_starting_at_the_last_epoch_is_plain_ce() {
    // DRW that never fires must be trace-identical to cross-entropy training.
    let dataset = blobs(3, 5.0, 240, 6, 17);
    let split = split_dataset(&dataset, &random_plan(17)).unwrap();

    let mut drw = quick_options(8, 2);
    drw.loss = LossSpec::new(LossKind::BalancedSoftmax);
    drw.two_stage.drw = true;
    drw.two_stage.start_epoch = 8;
    let with_drw = train(&dataset, &split, &drw).unwrap();

    let mut ce = quick_options(8, 2);
    ce.loss = LossSpec::new(LossKind::CrossEntropy);
    let plain = train(&dataset, &split, &ce).unwrap();

    assert_eq!(with_drw.history, plain.history);
    assert_eq!(
        with_drw.model.to_checkpoint_json(),
        plain.model.to_checkpoint_json()
    );
}

#[test]
fn every_loss_kind_trains() {
    let dataset = blobs(4, 8.0, 320, 6, 23);
    let split = split_dataset(&dataset, &random_plan(23)).unwrap();
    for kind in [
        LossKind::CrossEntropy,
        LossKind::CostSensitive,
        LossKind::ClassBalancedFocal,
        LossKind::ClassBalancedCe,
        LossKind::BalancedSoftmax,
        LossKind::InfluenceBalanced,
        LossKind::Dive,
    ] {
        let mut options = quick_options(4, 3);
        options.loss = LossSpec::new(kind);
        options.two_stage.start_epoch = 2;
        let output = train(&dataset, &split, &options)
            .unwrap_or_else(|e| panic!("{kind:?} failed: {e}"));
        assert_eq!(output.history.len(), 4);
        assert!(output.history.iter().all(|r| r.train_loss.is_finite()));
    }
}

#[test]
fn combiners_and_schedules_train() {
    let dataset = blobs(4, 8.0, 320, 6, 29);
    let split = split_dataset(&dataset, &random_plan(29)).unwrap();
    for kind in [CombinerKind::Mixup, CombinerKind::Remix, CombinerKind::Bbn] {
        let mut options = quick_options(4, 7);
        options.combiner = CombinerSpec::new(kind);
        let output = train(&dataset, &split, &options)
            .unwrap_or_else(|e| panic!("{kind:?} failed: {e}"));
        assert!(output.history.iter().all(|r| r.train_loss.is_finite()));
        if matches!(kind, CombinerKind::Bbn) {
            assert!(output.model.bbn_head.is_some());
        }
    }
    // DRS switch and progressive sampler.
    let mut drs = quick_options(6, 11);
    drs.two_stage.drs = true;
    drs.two_stage.start_epoch = 3;
    train(&dataset, &split, &drs).unwrap();
    let mut progressive = quick_options(6, 11);
    progressive.sampler = SamplerKind::Progressive;
    train(&dataset, &split, &progressive).unwrap();
    // Class-dependent temperatures.
    let mut cdt = quick_options(4, 13);
    cdt.cdt_gamma = Some(0.3);
    train(&dataset, &split, &cdt).unwrap();
}

#[test]
fn decoupled_stage_two_keeps_the_encoder_frozen() {
    // The trainer asserts the frozen-encoder invariant internally; a
    // successful run with a decoupling stage is the check.
    let dataset = blobs(4, 8.0, 320, 6, 31);
    let split = split_dataset(&dataset, &random_plan(31)).unwrap();
    let mut options = quick_options(5, 19);
    options.decouple_stage2_epochs = Some(4);
    let output = train(&dataset, &split, &options).unwrap();
    assert_eq!(output.history.len(), 9);
}

#[test]
fn divergence_aborts_with_context() {
    let dataset = blobs(3, 3.0, 150, 4, 37);
    let split = split_dataset(&dataset, &random_plan(37)).unwrap();
    let mut options = quick_options(10, 3);
    options.optimizer.learning_rate = 1e18;
    options.optimizer.warmup_epochs = 0;
    match train(&dataset, &split, &options) {
        Err(Error::Diverged { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn open_head_flags_far_outliers_only() {
    let dataset = blobs(5, 10.0, 500, 8, 41);
    let split = split_dataset(&dataset, &random_plan(41)).unwrap();
    let mut options = quick_options(8, 5);
    options.open_percentile = Some(95.0);
    let output = train(&dataset, &split, &options).unwrap();
    let head = output.open_head.expect("open head requested");

    // A far probe (way outside the training cloud) must be flagged open.
    let probe = ndarray::Array2::from_elem((1, 8), 1e6);
    let pass = output.model.encoder_forward(probe.view()).unwrap();
    let h = pass.penultimate(&probe);
    let reach = oltr_reachability(&head, h.row(0));
    assert!(reach > head.threshold);

    // fit_open_head reproduces the trainer's head.
    let refit = fit_open_head(&output.model, &dataset, &split, 95.0).unwrap();
    assert_eq!(refit, head);
}

#[test]
fn evaluation_reports_metrics_and_subsets() {
    let dataset = blobs(6, 20.0, 900, 8, 43);
    let split = split_dataset(&dataset, &random_plan(43)).unwrap();
    let output = train(&dataset, &split, &quick_options(10, 21)).unwrap();
    let ctx = EvalContext {
        split_name: "random".into(),
        seed: 21,
        ..EvalContext::default()
    };
    let report = evaluate(
        &output.model,
        &dataset,
        &split,
        TaskKind::LtClassification,
        None,
        &ctx,
    )
    .unwrap();
    for key in ["balanced_accuracy", "balanced_f1", "accuracy", "macro_f1", "kappa", "mcc"] {
        let value = report.get(key).unwrap_or_else(|| panic!("{key} missing"));
        assert!(value.is_finite());
    }
    assert!(report.subset("head").is_some());
    assert!(report.meta.split.as_deref() == Some("random"));
}

#[test]
fn open_lt_round_trip_scores_open_samples() {
    let dataset = blobs(6, 10.0, 900, 8, 47);
    let mut plan = SplitPlan::new(
        SplitMethod::Open {
            base: Box::new(SplitMethod::Random),
        },
        (0.7, 0.15, 0.15),
        47,
    );
    plan.open_fraction = 0.34; // ceil(0.34 * 6) = 3 open classes
    let split = split_dataset(&dataset, &plan).unwrap();
    assert_eq!(split.open_classes.len(), 3);

    let mut options = quick_options(8, 9);
    options.open_percentile = Some(95.0);
    let output = train(&dataset, &split, &options).unwrap();
    let ctx = EvalContext {
        split_name: plan.method.name(),
        seed: 9,
        ..EvalContext::default()
    };
    let report = evaluate(
        &output.model,
        &dataset,
        &split,
        TaskKind::OpenLt,
        output.open_head.as_ref(),
        &ctx,
    )
    .unwrap();
    // The open subset is reported and the matrix includes the extra class.
    assert!(report.subset("open").is_some());
    assert_eq!(report.meta.num_classes, Some(4)); // 3 closed + 1 open

    // Without a fitted head the setting is an error.
    assert!(matches!(
        evaluate(&output.model, &dataset, &split, TaskKind::OpenLt, None, &ctx),
        Err(Error::MissingOpenHead)
    ));
}

fn regression_dataset(n: usize, seed: u64) -> Dataset {
    // y = sum of features plus noise; feature values spread a long tail.
    let mut rng = RngState::new(seed);
    let dim = 4;
    let mut features = ndarray::Array2::zeros((n, dim));
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let scale = if i % 10 == 0 { 3.0 } else { 1.0 };
        let mut total = 0.0;
        for c in 0..dim {
            let v = (rng.uniform() * 2.0 - 1.0) * scale;
            features[(i, c)] = v;
            total += v;
        }
        targets.push(total + 0.05 * (rng.uniform() - 0.5));
    }
    Dataset::new(
        features,
        Labels::Continuous {
            values: targets,
            unit: "u".into(),
        },
        (0..n).map(|i| format!("r{i}")).collect(),
        None,
        None,
    )
    .unwrap()
}

#[test]
fn regression_training_reduces_error() {
    let dataset = regression_dataset(400, 53);
    let split = split_dataset(&dataset, &random_plan(53)).unwrap();
    let mut options = quick_options(40, 15);
    options.optimizer.learning_rate = 0.01;
    options.regression_loss = RegressionLoss::SquaredError;
    let output = train(&dataset, &split, &options).unwrap();
    let first = output.history.first().unwrap().valid_metric;
    let last_best = output
        .history
        .iter()
        .map(|r| r.valid_metric)
        .fold(f64::INFINITY, f64::min);
    assert!(
        last_best < first * 0.5,
        "validation MAE did not improve: {first} -> {last_best}"
    );

    let ctx = EvalContext {
        split_name: "random".into(),
        seed: 15,
        regression_bins: 10,
        ..EvalContext::default()
    };
    let report = evaluate(
        &output.model,
        &dataset,
        &split,
        TaskKind::ImbalancedRegression,
        None,
        &ctx,
    )
    .unwrap();
    assert!(report.get("mse").unwrap().is_finite());
    assert!(report.get("mae").unwrap() > Some(0.0).unwrap());
    assert!(report.subset("head").is_some());
}

#[test]
fn regression_smoothing_paths_train() {
    let dataset = regression_dataset(300, 59);
    let split = split_dataset(&dataset, &random_plan(59)).unwrap();
    for (lds, fds) in [(true, false), (false, true), (true, true)] {
        let mut options = quick_options(6, 25);
        options.regression_loss = RegressionLoss::Focal {
            beta: 0.5,
            gamma: 1.0,
        };
        options.regression.bins = 12;
        options.regression.lds = lds.then(|| KernelSpec::gaussian(1.0, 2));
        options.regression.fds = fds.then(|| KernelSpec::gaussian(1.0, 2));
        let output = train(&dataset, &split, &options)
            .unwrap_or_else(|e| panic!("lds={lds} fds={fds}: {e}"));
        assert!(output.history.iter().all(|r| r.train_loss.is_finite()));
    }
}

#[test]
fn config_to_training_round_trip() {
    // A full config drives the same trainer through the typed surface.
    let json = r#"{
        "dataset": {
            "synthetic": {"num_class": 5, "imbalance_ratio": 12.0, "n_total": 400, "dim": 8},
            "task": "classification",
            "split": {"method": "standard", "fractions": [0.6, 0.2, 0.2]}
        },
        "loss": {"type": "CB_CE", "gamma": 0.95},
        "train": {"batch_size": 32, "epochs": 4, "hidden_dims": [16],
                   "sampler": {"type": "progressive"}},
        "setting": {"type": "LT Classification", "num_class": 5},
        "seed": 61
    }"#;
    let config = parse_config(json).unwrap();
    let dataset = imlab_core::experiment::load_dataset(&config).unwrap();
    let split = split_dataset(&dataset, &config.split_plan().unwrap()).unwrap();
    let options = config.train_options(None).unwrap();
    assert!(matches!(options.loss.kind, LossKind::ClassBalancedCe));
    assert!(matches!(options.sampler, SamplerKind::Progressive));
    let output = train(&dataset, &split, &options).unwrap();
    assert_eq!(output.history.len(), 4);
}
