//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label list is empty")]
    EmptyLabels,

    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    #[error("label {label} at index {index} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("class {class} has no true samples; {metric} is undefined")]
    ClassWithoutSupport { class: usize, metric: &'static str },

    #[error("class statistics cover {stats} classes but the confusion matrix has {matrix}")]
    StatsDimensionMismatch { stats: usize, matrix: usize },

    #[error("no class has both positive and negative samples; {metric} is undefined")]
    NoScorableClass { metric: &'static str },

    #[error("input is empty")]
    EmptyInput,

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid hyperparameter {name}={value}: {requirement}")]
    InvalidHyper {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },

    #[error("class {class} has zero frequency")]
    ZeroFrequency { class: usize },

    #[error("teacher probabilities sum to {sum}, not 1")]
    InvalidDistribution { sum: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid split plan: {0}")]
    InvalidPlan(String),

    #[error("class {class} is too small for the requested split: needs {need} samples, has {have}")]
    ClassTooSmall {
        class: usize,
        need: usize,
        have: usize,
    },

    #[error("dataset has no {what}")]
    MissingField { what: &'static str },

    #[error("degenerate split input: {0}")]
    DegenerateSplit(String),

    #[error("invalid binning: {0}")]
    InvalidBinning(String),

    #[error("bin counts are all zero")]
    AllZeroCounts,

    #[error("no populated bins")]
    NoPopulatedBins,

    #[error("shape mismatch in {where_}: expected {expected}, got {got}")]
    ShapeMismatch {
        where_: &'static str,
        expected: String,
        got: String,
    },

    #[error("training diverged at epoch {epoch}; last finite mean loss was {last_loss}")]
    Diverged { epoch: usize, last_loss: f64 },

    #[error("the open long-tail setting requires a fitted open-set head")]
    MissingOpenHead,

    #[error("setting {setting} is inconsistent with {label_kind} labels")]
    SettingLabelMismatch {
        setting: &'static str,
        label_kind: &'static str,
    },

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("invalid resample targets: {0}")]
    InvalidResample(String),

    #[error("column {name} is missing")]
    MissingColumn { name: String },

    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: unknown categorical label {value:?}")]
    UnknownLabel { row: usize, value: String },

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("reports share no metric keys")]
    NoSharedMetrics,

    #[error("report comparison needs at least two reports, got {0}")]
    NotEnoughReports(usize),

    #[error("malformed report: {0}")]
    MalformedReport(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by a bad experiment configuration.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } | Error::Json(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
