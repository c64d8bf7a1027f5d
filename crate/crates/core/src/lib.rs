//! Behavior-weighted graph convolution recommender.
//!
//! User-item interactions carry a behavior score φ(r) that weights both the
//! messages passed over the bipartite graph and the training losses. The
//! model is trained on a weighted pairwise ranking loss, a click-through
//! cross-entropy and a GRU next-item loss, then used to produce top-k lists
//! for every user.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision instantiation used by the driver.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod matrix;
pub mod model;
pub mod scalar;
pub mod topk;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = matrix::Matrix<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type NodeEmbeddings = model::NodeEmbeddings<f64>;
pub type TrainState = training::TrainState<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;

pub type Matrix32 = matrix::Matrix<f32>;
pub type ModelParams32 = model::ModelParams<f32>;
