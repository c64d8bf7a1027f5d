use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, build_quadruples, compute_gradients, LossWeights, TrainState};
use crate::data::{build_sequences, BipartiteGraph, DatasetSplit};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{init_params, Hyperparams};
use crate::scalar::Scalar;

/// Cut-off of the validation metric used for model selection.
pub const VALIDATION_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rank: f64,
    pub ctr: f64,
    pub seq: f64,
    pub total: f64,
    pub val_urecall: Option<f64>,
}

impl EpochRecord {
    /// `epoch, l1, l2, l3, total, val_urecall@10`
    pub fn to_line(&self) -> String {
        let val = self
            .val_urecall
            .map_or_else(|| "nan".to_string(), |v| v.to_string());
        format!(
            "{}, {}, {}, {}, {}, {}",
            self.epoch, self.rank, self.ctr, self.seq, self.total, val
        )
    }
}

/// Trains from a fresh initialization.
///
/// Each epoch resamples `n_negatives` negatives per training edge, takes one
/// full-batch Adam step (or one step per mini-batch when
/// `hyper.batch_size` is set), and scores the validation split. The
/// parameters with the best validation URecall@10 are kept in
/// `best_params`; training stops after `hyper.patience` epochs without
/// improvement (`0` disables early stopping).
pub fn fit<T: Scalar>(
    graph: &BipartiteGraph,
    split: &DatasetSplit,
    hyper: &Hyperparams,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainState<T>> {
    hyper.validate()?;
    if split.train.is_empty() || graph.n_edges() == 0 {
        return Err(Error::EmptyInput("train split"));
    }
    let weights = LossWeights::from(hyper);
    let sequences = build_sequences(&split.train, graph, hyper.max_seq_len);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(1);
    let mut state = TrainState::new(init_params::<T>(graph, hyper), rng);
    let mut stale = 0usize;

    for epoch in 1..=hyper.epochs {
        let mut quads = build_quadruples(graph, hyper.n_negatives, &mut state.rng)?;
        let losses = match hyper.batch_size {
            None => {
                let (losses, grads) =
                    compute_gradients(graph, &state.params, weights, &quads, &sequences)?;
                adam_step(&mut state, &grads, hyper.learning_rate)?;
                losses
            }
            Some(size) => {
                quads.shuffle(&mut state.rng);
                let n_batches = quads.len().div_ceil(size);
                let mut acc = super::Losses::default();
                for (b, batch) in quads.chunks(size).enumerate() {
                    let seqs = &sequences
                        [b * sequences.len() / n_batches..(b + 1) * sequences.len() / n_batches];
                    let (l, grads) = compute_gradients(graph, &state.params, weights, batch, seqs)?;
                    adam_step(&mut state, &grads, hyper.learning_rate)?;
                    acc.rank += l.rank;
                    acc.ctr += l.ctr;
                    acc.seq += l.seq;
                    acc.total += l.total;
                }
                let n = n_batches as f64;
                super::Losses {
                    rank: acc.rank / n,
                    ctr: acc.ctr / n,
                    seq: acc.seq / n,
                    total: acc.total / n,
                }
            }
        };

        let val_urecall = match evaluate(graph, &state.params, &split.validation, VALIDATION_K) {
            Ok(r) => Some(r.urecall),
            Err(Error::NoEvaluableUsers) => None,
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            rank: losses.rank,
            ctr: losses.ctr,
            seq: losses.seq,
            total: losses.total,
            val_urecall,
        };
        state.history.push(record);
        on_epoch(&record);

        match val_urecall {
            Some(v) if state.best_val_urecall.is_none_or(|b| v > b) => {
                state.best_val_urecall = Some(v);
                state.best_params = state.params.clone();
                state.best_epoch = epoch;
                stale = 0;
            }
            Some(_) => stale += 1,
            None => {
                state.best_params = state.params.clone();
                state.best_epoch = epoch;
            }
        }
        if hyper.patience > 0 && stale >= hyper.patience {
            break;
        }
    }
    Ok(state)
}
