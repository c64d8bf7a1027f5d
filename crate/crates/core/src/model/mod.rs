//! Parameters and forward pass of the behavior-weighted graph convolution
//! model.

mod conv;
mod decoder;
mod gru;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use conv::floored;
pub use conv::{
    combine_layers, convolve_layer, forward, scaling_factor, LayerCache, NodeEmbeddings, COSINE_EPS,
};
pub use decoder::{affinity, ctr_logit};
pub use gru::{
    gru_forward, gru_trace, log_softmax, next_item_distribution, softmax, GruStep, GruTrace,
};
pub use params::{init_params, GruParams, ModelParams};

/// Model shape and training knobs. Defaults:
/// 2 layers, 64-dimensional embeddings, 10 negatives, Adam at 0.01, equal
/// loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Width of the initial and per-layer embeddings.
    pub embed_dim: usize,
    /// Width of the combined embeddings fed to the decoders.
    pub final_dim: usize,
    pub n_layers: usize,
    /// Ranking loss weight.
    pub lambda1: f64,
    /// Click-through loss weight.
    pub lambda2: f64,
    /// Next-item loss weight.
    pub lambda3: f64,
    pub n_negatives: usize,
    pub learning_rate: f64,
    pub max_seq_len: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Quadruples per optimizer step; `None` trains full-batch.
    pub batch_size: Option<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            final_dim: 64,
            n_layers: 2,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            n_negatives: 10,
            learning_rate: 0.01,
            max_seq_len: 20,
            epochs: 100,
            seed: 0,
            patience: 10,
            batch_size: None,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.final_dim == 0 {
            return bad("embedding dimensions must be >= 1".into());
        }
        if self.n_negatives == 0 {
            return bad("n_negatives must be >= 1".into());
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be >= 2".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let h = Hyperparams::default();
        h.validate().unwrap();
        assert_eq!(
            (h.embed_dim, h.final_dim, h.n_layers, h.n_negatives),
            (64, 64, 2, 10)
        );
        assert_eq!(h.learning_rate, 0.01);
    }

    #[test]
    fn zero_layers_allowed() {
        let h = Hyperparams {
            n_layers: 0,
            ..Default::default()
        };
        h.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let h = Hyperparams {
            n_negatives: 0,
            ..Hyperparams::default()
        };
        assert!(h.validate().is_err());
        let h = Hyperparams {
            lambda2: -0.1,
            ..Hyperparams::default()
        };
        assert!(h.validate().is_err());
    }
}
