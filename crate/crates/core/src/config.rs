//! Experiment configuration: a strict JSON schema with defaulting,
//! cross-field validation and path-named errors. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{CountDecay, LabelSchema, SyntheticSpec};
use crate::error::{Error, Result};
use crate::losses::{LossKind, LossSpec};
use crate::nn::adam::AdamConfig;
use crate::nn::trainer::{
    RegressionLoss, RegressionOptions, TaskKind, TrainOptions, TwoStage,
};
use crate::sampling::{BetaSchedule, CombinerKind, CombinerSpec, SamplerKind};
use crate::smoothing::{BinStrategy, KernelKind, KernelSpec};
use crate::splits::{SplitMethod, SplitPlan};

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fractions: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Accepted for compatibility; not interpreted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub by_class: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub split: SplitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_class: usize,
    pub imbalance_ratio: f64,
    pub n_total: usize,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_radius_sigmas: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_kd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(rename = "type")]
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerConfig {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drw: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drs: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupleConfig {
    pub stage2_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenConfig {
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combiner: Option<CombinerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub two_stage: Option<TwoStageConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decouple: Option<DecoupleConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cdt_gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open: Option<OpenConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingConfig {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdsConfig {
    pub kernel: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reweight: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdsConfig {
    pub kernel: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_strategy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lds: Option<LdsConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fds: Option<FdsConfig>,
}

/// A validated experiment description, JSON-mirrored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub setting: SettingConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionConfig>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Accepted for compatibility; this implementation is CPU-only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_gpu: Option<bool>,
}

/// Allowed-key tree for the strict schema walk.
fn schema() -> BTreeMap<&'static str, Vec<&'static str>> {
    let mut m = BTreeMap::new();
    m.insert(
        "",
        vec![
            "dataset",
            "loss",
            "train",
            "setting",
            "regression",
            "seed",
            "output",
            "use_gpu",
        ],
    );
    m.insert(
        "dataset",
        vec!["path", "synthetic", "task", "classes", "unit", "split"],
    );
    m.insert(
        "dataset.synthetic",
        vec![
            "num_class",
            "imbalance_ratio",
            "n_total",
            "dim",
            "decay",
            "sigma",
            "mean_radius_sigmas",
        ],
    );
    m.insert(
        "dataset.split",
        vec!["method", "fractions", "open_fraction", "seed", "by_class"],
    );
    m.insert("loss", vec!["type", "gamma", "beta", "lambda_kd", "epsilon"]);
    m.insert(
        "train",
        vec![
            "batch_size",
            "epochs",
            "hidden_dims",
            "sampler",
            "combiner",
            "optimizer",
            "two_stage",
            "decouple",
            "cdt_gamma",
            "open",
        ],
    );
    m.insert("train.sampler", vec!["type"]);
    m.insert("train.combiner", vec!["type", "alpha", "kappa", "tau"]);
    m.insert(
        "train.optimizer",
        vec!["type", "lr", "momentum", "wc", "warmup_epochs", "warmup_factor"],
    );
    m.insert("train.two_stage", vec!["drw", "drs", "start_epoch"]);
    m.insert("train.decouple", vec!["stage2_epochs"]);
    m.insert("train.open", vec!["percentile"]);
    m.insert("setting", vec!["type", "num_class"]);
    m.insert("regression", vec!["bins", "bin_strategy", "lds", "fds"]);
    m.insert(
        "regression.lds",
        vec!["kernel", "width", "truncation", "reweight"],
    );
    m.insert(
        "regression.fds",
        vec!["kernel", "width", "truncation", "eps"],
    );
    m
}

fn walk_keys(
    value: &serde_json::Value,
    path: &str,
    schema: &BTreeMap<&'static str, Vec<&'static str>>,
) -> Result<()> {
    let Some(obj) = value.as_object() else {
        return Ok(());
    };
    let Some(allowed) = schema.get(path) else {
        return Ok(());
    };
    for (key, child) in obj {
        if !allowed.contains(&key.as_str()) {
            let full = if path.is_empty() {
                key.clone()
            } else {
                format!("{path}.{key}")
            };
            return Err(config_error(&full, "unknown key"));
        }
        let child_path = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        walk_keys(child, &child_path, schema)?;
    }
    Ok(())
}

/// Parse, default and validate a configuration. Errors name the offending
/// JSON path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| config_error("", "configuration must be a JSON object"))?;
    let missing: Vec<&str> = ["dataset", "loss", "train", "setting", "seed"]
        .iter()
        .filter(|k| !obj.contains_key(**k))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(config_error("", format!("missing required keys: {}", missing.join(", "))));
    }
    walk_keys(&value, "", &schema())?;
    let mut config: ExperimentConfig = serde_json::from_value(value)?;
    apply_defaults(&mut config);
    validate(&config)?;
    Ok(config)
}

/// Canonical JSON of a config (defaults materialized where parsing filled
/// them). `parse_config(serialize_config(c)) == c`.
pub fn serialize_config(config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serialization cannot fail")
}

fn apply_defaults(config: &mut ExperimentConfig) {
    let split = &mut config.dataset.split;
    split.fractions.get_or_insert([0.8, 0.1, 0.1]);
    split.seed.get_or_insert(config.seed);

    let train = &mut config.train;
    train.batch_size.get_or_insert(128);
    train.epochs.get_or_insert(50);
    train.hidden_dims.get_or_insert(vec![1024, 256, 64]);
    if let Some(optimizer) = &mut train.optimizer {
        optimizer.kind.get_or_insert("ADAM".into());
        optimizer.lr.get_or_insert(1e-3);
        optimizer.momentum.get_or_insert(0.9);
        optimizer.wc.get_or_insert(2e-4);
        optimizer.warmup_epochs.get_or_insert(20);
        optimizer.warmup_factor.get_or_insert(0.01);
    }
    if task_kind_of(&config.setting.kind) == Some(TaskKind::OpenLt) && train.open.is_none() {
        train.open = Some(OpenConfig { percentile: 95.0 });
    }
}

fn task_kind_of(name: &str) -> Option<TaskKind> {
    match name {
        "Imbalanced Classification" => Some(TaskKind::ImbalancedClassification),
        "LT Classification" => Some(TaskKind::LtClassification),
        "Open LT" => Some(TaskKind::OpenLt),
        "Imbalanced Regression" => Some(TaskKind::ImbalancedRegression),
        _ => None,
    }
}

fn validate(config: &ExperimentConfig) -> Result<()> {
    let task = task_kind_of(&config.setting.kind).ok_or_else(|| {
        config_error(
            "setting.type",
            format!(
                "unknown setting {:?}; expected one of \"Imbalanced Classification\", \
                 \"LT Classification\", \"Imbalanced Regression\", \"Open LT\"",
                config.setting.kind
            ),
        )
    })?;

    match config.dataset.task.as_str() {
        "classification" => {
            if task.is_regression() {
                return Err(config_error(
                    "setting.type",
                    "regression setting with categorical dataset task",
                ));
            }
        }
        "regression" => {
            if !task.is_regression() {
                return Err(config_error(
                    "setting.type",
                    "classification setting with continuous dataset task",
                ));
            }
        }
        other => {
            return Err(config_error(
                "dataset.task",
                format!("unknown task {other:?}; expected \"classification\" or \"regression\""),
            ))
        }
    }

    match (&config.dataset.path, &config.dataset.synthetic) {
        (Some(_), Some(_)) => {
            return Err(config_error(
                "dataset",
                "path and synthetic are mutually exclusive",
            ))
        }
        (None, None) => {
            return Err(config_error(
                "dataset",
                "one of path or synthetic is required",
            ))
        }
        _ => {}
    }
    if let Some(synthetic) = &config.dataset.synthetic {
        if task.is_regression() {
            return Err(config_error(
                "dataset.synthetic",
                "the synthetic generator produces categorical labels",
            ));
        }
        if let Some(decay) = &synthetic.decay {
            if decay != "power_law" && decay != "exponential" {
                return Err(config_error("dataset.synthetic.decay", "expected \"power_law\" or \"exponential\""));
            }
        }
        if let Some(num_class) = config.setting.num_class {
            if num_class != synthetic.num_class {
                return Err(config_error(
                    "setting.num_class",
                    "does not match dataset.synthetic.num_class",
                ));
            }
        }
    }
    if config.dataset.path.is_some() && !task.is_regression() {
        let has_vocab = config.dataset.classes.is_some();
        let has_k = config.setting.num_class.is_some();
        if !has_vocab && !has_k {
            return Err(config_error(
                "dataset.classes",
                "categorical CSV ingestion needs dataset.classes or setting.num_class",
            ));
        }
    }

    split_method_of(config)?;
    if task == TaskKind::OpenLt {
        let method = &config.dataset.split.method;
        if !method.starts_with("open-") {
            return Err(config_error(
                "dataset.split.method",
                "the open long-tail setting needs an open-* split method",
            ));
        }
        if config.dataset.split.open_fraction.is_none() {
            return Err(config_error(
                "dataset.split.open_fraction",
                "the open long-tail setting needs open_fraction",
            ));
        }
    }

    let loss = loss_selection(config)?;
    match (&loss, task.is_regression()) {
        (ResolvedLoss::Classification(_), true) => {
            return Err(config_error(
                "loss.type",
                "classification loss with a regression setting",
            ))
        }
        (ResolvedLoss::Regression(_), false) => {
            return Err(config_error(
                "loss.type",
                "regression loss with a classification setting",
            ))
        }
        _ => {}
    }

    let combiner = combiner_kind_of(config)?;
    if !matches!(combiner, CombinerKind::None) {
        if task.is_regression() {
            return Err(config_error(
                "train.combiner.type",
                "instance combiners apply to classification settings only",
            ));
        }
        if !matches!(loss, ResolvedLoss::Classification(LossKind::CrossEntropy)) {
            return Err(config_error(
                "train.combiner.type",
                "instance combiners train with the plain cross-entropy loss",
            ));
        }
    }
    sampler_kind_of(config)?;
    if task.is_regression() {
        if sampler_kind_of(config)? != SamplerKind::InstanceBalanced {
            return Err(config_error(
                "train.sampler.type",
                "regression training uses the instance-balanced sampler",
            ));
        }
    }

    let epochs = config.train.epochs.unwrap_or(50);
    if epochs > 200 {
        return Err(config_error("train.epochs", "at most 200 epochs"));
    }
    if let Some(two_stage) = &config.train.two_stage {
        let enabled = two_stage.drw.unwrap_or(false) || two_stage.drs.unwrap_or(false);
        let start = two_stage.start_epoch.unwrap_or(10);
        if enabled && start >= epochs {
            return Err(config_error(
                "train.two_stage.start_epoch",
                "must be smaller than train.epochs",
            ));
        }
    }
    if let Some(optimizer) = &config.train.optimizer {
        if let Some(kind) = &optimizer.kind {
            if kind != "ADAM" {
                return Err(config_error("train.optimizer.type", "only ADAM is available"));
            }
        }
    }
    if let Some(regression) = &config.regression {
        if let Some(strategy) = &regression.bin_strategy {
            if strategy != "equal_width" && strategy != "equal_count" {
                return Err(config_error(
                    "regression.bin_strategy",
                    "expected \"equal_width\" or \"equal_count\"",
                ));
            }
        }
        for (name, kernel) in [
            ("lds", regression.lds.as_ref().map(|l| l.kernel.as_str())),
            ("fds", regression.fds.as_ref().map(|f| f.kernel.as_str())),
        ] {
            if let Some(kernel) = kernel {
                if kernel_kind_of(kernel).is_none() {
                    return Err(config_error(
                        &format!("regression.{name}.kernel"),
                        "expected \"identity\", \"gaussian\" or \"triangular\"",
                    ));
                }
            }
        }
    }
    // Exercise the conversions so inconsistencies surface at parse time.
    config.split_plan()?;
    config.loss_spec()?;
    Ok(())
}

enum ResolvedLoss {
    Classification(LossKind),
    Regression(RegressionLoss),
}

fn loss_selection(config: &ExperimentConfig) -> Result<ResolvedLoss> {
    let loss = &config.loss;
    let kind = match loss.kind.as_str() {
        "CrossEntropy" | "CE" => ResolvedLoss::Classification(LossKind::CrossEntropy),
        "CostSensitive" | "CostSensitiveCE" | "CS" => {
            ResolvedLoss::Classification(LossKind::CostSensitive)
        }
        "ClassBalancedFocal" | "CB_F" | "CB_Focal" | "CBFocal" => {
            ResolvedLoss::Classification(LossKind::ClassBalancedFocal)
        }
        "ClassBalancedCE" | "CB_CE" | "CBCE" => {
            ResolvedLoss::Classification(LossKind::ClassBalancedCe)
        }
        "BalancedSoftmax" | "BalancedSoftmaxCE" | "BS" => {
            ResolvedLoss::Classification(LossKind::BalancedSoftmax)
        }
        "InfluenceBalanced" | "IB" => ResolvedLoss::Classification(LossKind::InfluenceBalanced),
        "DiVE" => ResolvedLoss::Classification(LossKind::Dive),
        "MSE" => ResolvedLoss::Regression(RegressionLoss::SquaredError),
        "MAE" => ResolvedLoss::Regression(RegressionLoss::AbsoluteError),
        "FocalR" | "Focal-R" => ResolvedLoss::Regression(RegressionLoss::Focal {
            beta: loss.beta.unwrap_or(0.2),
            gamma: loss.gamma.unwrap_or(1.0),
        }),
        other => {
            return Err(config_error(
                "loss.type",
                format!("unknown loss {other:?}"),
            ))
        }
    };
    Ok(kind)
}

fn sampler_kind_of(config: &ExperimentConfig) -> Result<SamplerKind> {
    match config.train.sampler.as_ref().map(|s| s.kind.as_str()) {
        None | Some("instance_balanced") | Some("uniform") => Ok(SamplerKind::InstanceBalanced),
        Some("class_balanced") => Ok(SamplerKind::ClassBalanced),
        Some("progressive") => Ok(SamplerKind::Progressive),
        Some("reversed") => Ok(SamplerKind::Reversed),
        Some(other) => Err(config_error(
            "train.sampler.type",
            format!("unknown sampler {other:?}"),
        )),
    }
}

fn combiner_kind_of(config: &ExperimentConfig) -> Result<CombinerKind> {
    match config.train.combiner.as_ref().map(|c| c.kind.as_str()) {
        None | Some("none") => Ok(CombinerKind::None),
        Some("mixup") | Some("manifold_mixup") => Ok(CombinerKind::Mixup),
        Some("remix") => Ok(CombinerKind::Remix),
        Some("bbn_mix") | Some("bbn") => Ok(CombinerKind::Bbn),
        Some(other) => Err(config_error(
            "train.combiner.type",
            format!("unknown combiner {other:?}"),
        )),
    }
}

fn kernel_kind_of(name: &str) -> Option<KernelKind> {
    match name {
        "identity" => Some(KernelKind::Identity),
        "gaussian" => Some(KernelKind::Gaussian),
        "triangular" => Some(KernelKind::Triangular),
        _ => None,
    }
}

fn split_method_of(config: &ExperimentConfig) -> Result<SplitMethod> {
    fn base_of(name: &str) -> Option<SplitMethod> {
        match name {
            "standard" => Some(SplitMethod::Standard),
            "random" => Some(SplitMethod::Random),
            "temporal" | "time" => Some(SplitMethod::Temporal),
            "group" | "scaffold" => Some(SplitMethod::Group),
            _ => None,
        }
    }
    let name = config.dataset.split.method.as_str();
    if name == "combination" || name == "open-combination" {
        return Err(config_error(
            "dataset.split.method",
            "the combination split is not supported",
        ));
    }
    if let Some(base_name) = name.strip_prefix("open-") {
        let base = base_of(base_name).ok_or_else(|| {
            config_error(
                "dataset.split.method",
                format!("unknown split method {name:?}"),
            )
        })?;
        return Ok(SplitMethod::Open {
            base: Box::new(base),
        });
    }
    base_of(name).ok_or_else(|| {
        config_error(
            "dataset.split.method",
            format!("unknown split method {name:?}"),
        )
    })
}

impl ExperimentConfig {
    pub fn task_kind(&self) -> Result<TaskKind> {
        task_kind_of(&self.setting.kind)
            .ok_or_else(|| config_error("setting.type", "unknown setting"))
    }

    pub fn split_plan(&self) -> Result<SplitPlan> {
        let method = split_method_of(self)?;
        let fractions = self.dataset.split.fractions.unwrap_or([0.8, 0.1, 0.1]);
        let plan = SplitPlan {
            method,
            fractions: (fractions[0], fractions[1], fractions[2]),
            open_fraction: self.dataset.split.open_fraction.unwrap_or(0.0),
            seed: self.dataset.split.seed.unwrap_or(self.seed),
        };
        plan.validate()
            .map_err(|e| config_error("dataset.split", e.to_string()))?;
        Ok(plan)
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        let kind = match loss_selection(self)? {
            ResolvedLoss::Classification(kind) => kind,
            // Regression losses are dispatched separately; carry a
            // placeholder kind so hyperparameters still flow.
            ResolvedLoss::Regression(_) => LossKind::FocalR,
        };
        let mut spec = LossSpec::new(kind);
        if let Some(gamma) = self.loss.gamma {
            spec.gamma = gamma;
        }
        if let Some(beta) = self.loss.beta {
            spec.beta = beta;
        }
        if let Some(lambda) = self.loss.lambda_kd {
            spec.lambda_kd = lambda;
        }
        if let Some(epsilon) = self.loss.epsilon {
            spec.epsilon = epsilon;
        }
        spec.validate()
            .map_err(|e| config_error("loss", e.to_string()))?;
        Ok(spec)
    }

    pub fn regression_loss(&self) -> Result<RegressionLoss> {
        match loss_selection(self)? {
            ResolvedLoss::Regression(loss) => Ok(loss),
            ResolvedLoss::Classification(_) => Ok(RegressionLoss::SquaredError),
        }
    }

    pub fn label_schema(&self) -> Result<LabelSchema> {
        if self.task_kind()?.is_regression() {
            return Ok(LabelSchema::Continuous {
                unit: self.dataset.unit.clone().unwrap_or_default(),
            });
        }
        if let Some(classes) = &self.dataset.classes {
            return Ok(LabelSchema::Categorical {
                classes: classes.clone(),
            });
        }
        let num_classes = self
            .setting
            .num_class
            .or(self.dataset.synthetic.as_ref().map(|s| s.num_class))
            .ok_or_else(|| config_error("setting.num_class", "class count unavailable"))?;
        Ok(LabelSchema::CategoricalIndexed { num_classes })
    }

    pub fn synthetic_spec(&self) -> Result<Option<SyntheticSpec>> {
        let Some(synthetic) = &self.dataset.synthetic else {
            return Ok(None);
        };
        let decay = match synthetic.decay.as_deref() {
            None | Some("power_law") => CountDecay::PowerLaw,
            Some("exponential") => CountDecay::Exponential,
            Some(other) => {
                return Err(config_error(
                    "dataset.synthetic.decay",
                    format!("unknown decay {other:?}"),
                ))
            }
        };
        Ok(Some(SyntheticSpec {
            num_class: synthetic.num_class,
            imbalance_ratio: synthetic.imbalance_ratio,
            n_total: synthetic.n_total,
            dim: synthetic.dim,
            decay,
            sigma: synthetic.sigma.unwrap_or(1.0),
            mean_radius_sigmas: synthetic.mean_radius_sigmas.unwrap_or(3.0),
        }))
    }

    pub fn adam_config(&self) -> AdamConfig {
        let defaults = AdamConfig::default();
        match &self.train.optimizer {
            None => defaults,
            Some(optimizer) => AdamConfig {
                learning_rate: optimizer.lr.unwrap_or(defaults.learning_rate),
                beta1: optimizer.momentum.unwrap_or(defaults.beta1),
                weight_decay: optimizer.wc.unwrap_or(defaults.weight_decay),
                warmup_epochs: optimizer.warmup_epochs.unwrap_or(defaults.warmup_epochs),
                warmup_factor: optimizer.warmup_factor.unwrap_or(defaults.warmup_factor),
                ..defaults
            },
        }
    }

    pub fn combiner_spec(&self) -> Result<CombinerSpec> {
        let kind = combiner_kind_of(self)?;
        let mut spec = CombinerSpec::new(kind);
        if let Some(combiner) = &self.train.combiner {
            if let Some(alpha) = combiner.alpha {
                spec.alpha = alpha;
            }
            if let Some(kappa) = combiner.kappa {
                spec.kappa = kappa;
            }
            if let Some(tau) = combiner.tau {
                spec.tau = tau;
            }
        }
        spec.bbn_schedule = BetaSchedule::ParabolicDecay;
        spec.validate()
            .map_err(|e| config_error("train.combiner", e.to_string()))?;
        Ok(spec)
    }

    pub fn regression_options(&self) -> Result<RegressionOptions> {
        let mut options = RegressionOptions::default();
        let Some(regression) = &self.regression else {
            return Ok(options);
        };
        if let Some(bins) = regression.bins {
            options.bins = bins;
        }
        options.strategy = match regression.bin_strategy.as_deref() {
            None | Some("equal_width") => BinStrategy::EqualWidth,
            Some("equal_count") => BinStrategy::EqualCount,
            Some(other) => {
                return Err(config_error(
                    "regression.bin_strategy",
                    format!("unknown strategy {other:?}"),
                ))
            }
        };
        if let Some(lds) = &regression.lds {
            if lds.reweight.unwrap_or(true) {
                let kind = kernel_kind_of(&lds.kernel)
                    .ok_or_else(|| config_error("regression.lds.kernel", "unknown kernel"))?;
                options.lds = Some(KernelSpec {
                    kind,
                    width: lds.width.unwrap_or(1.0),
                    truncation: lds.truncation.unwrap_or(2),
                });
            }
        }
        if let Some(fds) = &regression.fds {
            let kind = kernel_kind_of(&fds.kernel)
                .ok_or_else(|| config_error("regression.fds.kernel", "unknown kernel"))?;
            options.fds = Some(KernelSpec {
                kind,
                width: fds.width.unwrap_or(1.0),
                truncation: fds.truncation.unwrap_or(2),
            });
            options.fds_eps = fds.eps.unwrap_or(1e-8);
        }
        Ok(options)
    }

    /// Assemble everything the trainer needs.
    pub fn train_options(&self, output_dir: Option<&std::path::Path>) -> Result<TrainOptions> {
        let two_stage = match &self.train.two_stage {
            None => TwoStage::default(),
            Some(two_stage) => TwoStage {
                drw: two_stage.drw.unwrap_or(false),
                drs: two_stage.drs.unwrap_or(false),
                start_epoch: two_stage.start_epoch.unwrap_or(10),
            },
        };
        let loss = self.loss_spec()?;
        let teacher_cache = if matches!(loss.kind, LossKind::Dive) {
            output_dir.map(|dir| dir.join("teacher.json"))
        } else {
            None
        };
        Ok(TrainOptions {
            epochs: self.train.epochs.unwrap_or(50),
            batch_size: self.train.batch_size.unwrap_or(128),
            hidden_dims: self
                .train
                .hidden_dims
                .clone()
                .unwrap_or_else(|| vec![1024, 256, 64]),
            loss,
            regression_loss: self.regression_loss()?,
            sampler: sampler_kind_of(self)?,
            combiner: self.combiner_spec()?,
            optimizer: self.adam_config(),
            two_stage,
            decouple_stage2_epochs: self.train.decouple.as_ref().map(|d| d.stage2_epochs),
            cdt_gamma: self.train.cdt_gamma,
            open_percentile: self.train.open.as_ref().map(|o| o.percentile),
            regression: self.regression_options()?,
            seed: self.seed,
            teacher_cache,
        })
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.output.as_ref().map(PathBuf::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A configuration in the published JSON-dictionary shape, with the
    /// dataset path substituted by a synthetic source.
    fn example_json() -> &'static str {
        r#"{
            "dataset": {
                "synthetic": {"num_class": 10, "imbalance_ratio": 50.0, "n_total": 2000, "dim": 16},
                "task": "classification",
                "split": {"method": "standard", "by_class": false}
            },
            "loss": {"type": "CrossEntropy"},
            "train": {
                "batch_size": 128,
                "combiner": {"type": "bbn_mix"},
                "optimizer": {"type": "ADAM", "lr": 1e-3, "momentum": 0.9, "wc": 2e-4},
                "two_stage": {"drw": false, "drs": false, "start_epoch": 10}
            },
            "setting": {"type": "LT Classification", "num_class": 10},
            "seed": 7,
            "use_gpu": true
        }"#
    }

    #[test]
    fn published_example_shape_parses() {
        let config = parse_config(example_json()).unwrap();
        assert_eq!(config.train.combiner.as_ref().unwrap().kind, "bbn_mix");
        assert_eq!(config.train.two_stage.as_ref().unwrap().start_epoch, Some(10));
        assert_eq!(config.train.batch_size, Some(128));
        let options = config.train_options(None).unwrap();
        assert_eq!(options.batch_size, 128);
        assert!(matches!(options.combiner.kind, CombinerKind::Bbn));
        assert_eq!(options.optimizer.learning_rate, 1e-3);
        assert_eq!(options.optimizer.beta1, 0.9);
        assert_eq!(options.optimizer.weight_decay, 2e-4);
    }

    #[test]
    fn empty_object_lists_missing_keys() {
        let err = parse_config("{}").unwrap_err();
        let text = err.to_string();
        for key in ["dataset", "loss", "train", "setting", "seed"] {
            assert!(text.contains(key), "{text} should mention {key}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let mut json: serde_json::Value = serde_json::from_str(example_json()).unwrap();
        json["train"]["optimizer"]["momentun"] = serde_json::json!(0.8);
        let err = parse_config(&json.to_string()).unwrap_err();
        assert!(err.to_string().contains("train.optimizer.momentun"));
    }

    #[test]
    fn regression_setting_with_categorical_labels_errors() {
        let mut json: serde_json::Value = serde_json::from_str(example_json()).unwrap();
        json["setting"]["type"] = serde_json::json!("Imbalanced Regression");
        let err = parse_config(&json.to_string()).unwrap_err();
        assert!(err.to_string().contains("setting.type"));
    }

    #[test]
    fn open_lt_requires_open_fraction() {
        let mut json: serde_json::Value = serde_json::from_str(example_json()).unwrap();
        json["setting"]["type"] = serde_json::json!("Open LT");
        json["dataset"]["split"]["method"] = serde_json::json!("open-standard");
        json["train"]["combiner"] = serde_json::json!({"type": "none"});
        let err = parse_config(&json.to_string()).unwrap_err();
        assert!(err.to_string().contains("open_fraction"));

        json["dataset"]["split"]["open_fraction"] = serde_json::json!(0.2);
        let config = parse_config(&json.to_string()).unwrap();
        assert_eq!(config.train.open.as_ref().unwrap().percentile, 95.0);
    }

    #[test]
    fn combination_split_is_rejected() {
        let mut json: serde_json::Value = serde_json::from_str(example_json()).unwrap();
        json["dataset"]["split"]["method"] = serde_json::json!("combination");
        let err = parse_config(&json.to_string()).unwrap_err();
        assert!(err.to_string().contains("not supported"));
    }

    #[test]
    fn combiner_requires_cross_entropy() {
        let mut json: serde_json::Value = serde_json::from_str(example_json()).unwrap();
        json["loss"]["type"] = serde_json::json!("BalancedSoftmax");
        let err = parse_config(&json.to_string()).unwrap_err();
        assert!(err.to_string().contains("train.combiner.type"));
    }

    #[test]
    fn round_trips_through_serialization() {
        let config = parse_config(example_json()).unwrap();
        let text = serialize_config(&config);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(config, parsed);
    }

    #[test]
    fn scaffold_is_an_alias_for_group() {
        let mut json: serde_json::Value = serde_json::from_str(example_json()).unwrap();
        json["dataset"]["split"]["method"] = serde_json::json!("scaffold");
        let config = parse_config(&json.to_string()).unwrap();
        assert_eq!(config.split_plan().unwrap().method, SplitMethod::Group);
        json["dataset"]["split"]["method"] = serde_json::json!("open-scaffold");
        json["dataset"]["split"]["open_fraction"] = serde_json::json!(0.2);
        let config = parse_config(&json.to_string()).unwrap();
        assert!(matches!(
            config.split_plan().unwrap().method,
            SplitMethod::Open { .. }
        ));
    }
}
