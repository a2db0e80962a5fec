//! Adversarial disentangling of an expression factor from all other factors
//! of variation in images.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature; file formats and the command-line runner live in the
//! `disentangle` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
mod nn;
pub mod optim;
pub mod tensor;
pub mod training;

pub use data::{generate_synthetic_dataset, render, split, Batch, Dataset, JitterDraw, Sample, Splits, SyntheticSpec};
pub use error::{Error, Result};
pub use eval::{
    ablation_reconstruction, class_similarity, cosine_similarity, head_accuracy, linear_probe, swap_synthesis, AblationRow, Head,
    ProbeConfig, ProbeResult, SimilaritySummary, SwapQuad,
};
pub use losses::{LossReport, LossWeights};
pub use model::{ClassProbabilities, GroupId, ModelConfig, ModelParams, Network, ParamGroup, RepresentationPair};
pub use tensor::Tensor;
pub use training::{train, MetricsRow, TrainConfig, TrainObserver, TrainState, Trainer};
