//! The trainable backbone: MLP, optimizer, classifier heads and the
//! training/evaluation loop.

pub mod adam;
pub mod heads;
pub mod mlp;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use heads::{
    argmax, cdt_logits, cdt_temperatures, knn_predict, oltr_fit_centroids, oltr_reachability,
    open_decision, OpenHead,
};
pub use mlp::{EncoderPass, Linear, LinearGrad, MlpModel, ModelGrads};
pub use trainer::{
    evaluate, fit_open_head, predict_probabilities, train, ClassMap, EpochRecord, EvalContext,
    RegressionLoss, RegressionOptions, TaskKind, TrainOptions, TrainOutput, TwoStage,
};
