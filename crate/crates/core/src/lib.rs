//! Training and evaluation engine for a real-vs-generated image detector
//! that works on precomputed CLIP feature banks.
//!
//! The classifier is a three-layer MLP trained with a blend of a CVaR
//! (worst-fraction) BCE term and a pairwise AUC hinge surrogate, optimized
//! with sharpness-aware perturbed gradients and Adam.
//!
//! | module | contents |
//! |---|---|
//! | [`bank`] | feature banks, binary/CSV formats, synthetic banks |
//! | [`net`] | the MLP, manual backprop, checkpoints |
//! | [`losses`] | BCE, CVaR with lambda bisection, AUC surrogate |
//! | [`optim`] | Adam, cosine schedule, SAM perturbation |
//! | [`trainer`] | the training loop, ablations, sweeps, loss landscapes |
//! | [`metrics`] | exact AUC and ROC curves |
//! | [`cli`] | the `robust-detect` command line |
//!
//! See `examples/` for one runnable program per capability.

pub mod bank;
pub mod cli;
pub mod config;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod params;
pub mod rng;
pub mod trainer;

pub use bank::{FeatureBank, Label};
pub use config::TrainConfig;
pub use metrics::{evaluate, exact_auc, EvalReport};
pub use net::MlpModel;
pub use trainer::{train, TrainRunRecord};
