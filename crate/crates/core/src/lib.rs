//! Framework-independent toolkit for deep imbalanced learning.
//!
//! The crate provides balanced evaluation metrics that are invariant to the
//! label distribution of the test set, the classic family of re-balancing
//! losses, deterministic dataset split protocols (including open-class
//! holdouts), training-time samplers and instance combiners, label/feature
//! distribution smoothing for imbalanced regression, and a small MLP with
//! analytic gradients so every method can be exercised end to end.
//!
//! Everything is driven by a single experiment seed: given the same
//! configuration, runs are bit-reproducible.

pub mod config;
pub mod confusion;
pub mod data;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod smoothing;
pub mod splits;
pub mod stats;

pub use confusion::ConfusionMatrix;
pub use dataset::{Dataset, Labels};
pub use error::{Error, Result};
pub use rng::RngState;
pub use stats::{build_class_stats, ClassStats, Tier};
