//! Joint learning of a global feature-dependency graph and a graph-attention
//! predictor for tabular data.
//!
//! The structure learner keeps a matrix of edge logits, samples relaxed
//! binary graphs from it, and reconstructs every feature from the features
//! its sampled graph column selects. The task learner runs masked multi-head
//! graph attention over the same sample and pools through a CLS node. Both
//! are trained together with [`trainer::fit`].

pub mod autodiff;
pub mod baselines;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod export;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod recovery;
pub mod rng;
pub mod simulator;
pub mod structure;
pub mod taskgat;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
