//! Negative sampling, the three training objectives and their exact
//! gradients, Adam, and the epoch loop.

mod adam;
mod backward;
mod fit;
pub mod gradcheck;
mod loss;
mod sampling;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Hyperparams, ModelParams};

pub use adam::{adam_step, AdamConfig};
pub use backward::compute_gradients;
pub use fit::{fit, EpochRecord};
pub use loss::{bpr_loss, ctr_loss, objective, seq_loss, total_loss, Losses};
pub use sampling::{build_quadruples, sample_negatives};

/// Positive edge `(u, v)` with behavior score `phi`, paired with a sampled
/// item `w` the user never interacted with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainQuadruple {
    pub u: usize,
    pub v: usize,
    pub phi: f64,
    pub w: usize,
}

/// Loss weights λ1..λ3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rank: f64,
    pub ctr: f64,
    pub seq: f64,
}

impl LossWeights {
    pub fn new(rank: f64, ctr: f64, seq: f64) -> Self {
        Self { rank, ctr, seq }
    }
}

impl From<&Hyperparams> for LossWeights {
    fn from(h: &Hyperparams) -> Self {
        Self::new(h.lambda1, h.lambda2, h.lambda3)
    }
}

/// Parameters plus optimizer and sampler state.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    /// Adam first moments, shaped like `params`.
    pub first_moment: ModelParams<T>,
    /// Adam second moments.
    pub second_moment: ModelParams<T>,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
    /// Parameters from the epoch with the best validation URecall@10.
    pub best_params: ModelParams<T>,
    pub best_epoch: usize,
    pub best_val_urecall: Option<f64>,
}

impl<T: crate::Scalar> TrainState<T> {
    pub fn new(params: ModelParams<T>, rng: ChaCha8Rng) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            best_params: params.clone(),
            params,
            step: 0,
            rng,
            history: Vec::new(),
            best_epoch: 0,
            best_val_urecall: None,
        }
    }
}
