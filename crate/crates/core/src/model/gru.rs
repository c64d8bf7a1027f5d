use super::params::GruParams;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Gate activations of one recurrence step.
#[derive(Debug, Clone)]
pub struct GruStep<T> {
    pub h_prev: Vec<T>,
    pub update: Vec<T>,
    pub reset: Vec<T>,
    pub cand: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct GruTrace<T> {
    pub steps: Vec<GruStep<T>>,
    pub output: Vec<T>,
}

fn affine<T: Scalar>(w: &Matrix<T>, x: &[T], u: &Matrix<T>, h: &[T], b: &Matrix<T>) -> Vec<T> {
    let wx = w.mul_vec(x);
    let uh = u.mul_vec(h);
    wx.iter()
        .zip(&uh)
        .zip(b.as_slice())
        .map(|((&a, &c), &bias)| a + c + bias)
        .collect()
}

/// Runs the recurrence from a zero state and keeps every gate.
pub fn gru_trace<T: Scalar>(inputs: &[&[T]], gru: &GruParams<T>) -> Result<GruTrace<T>> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("GRU input sequence"));
    }
    let hidden = gru.u_update.rows();
    let mut h = vec![T::zero(); hidden];
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        if x.len() != gru.w_update.cols() {
            return Err(Error::Shape(format!(
                "GRU input of width {} for weights {:?}",
                x.len(),
                gru.w_update.shape()
            )));
        }
        let update: Vec<T> = affine(&gru.w_update, x, &gru.u_update, &h, &gru.b_update)
            .into_iter()
            .map(Scalar::sigmoid)
            .collect();
        let reset: Vec<T> = affine(&gru.w_reset, x, &gru.u_reset, &h, &gru.b_reset)
            .into_iter()
            .map(Scalar::sigmoid)
            .collect();
        let gated: Vec<T> = reset.iter().zip(&h).map(|(&r, &hp)| r * hp).collect();
        let cand: Vec<T> = affine(&gru.w_cand, x, &gru.u_cand, &gated, &gru.b_cand)
            .into_iter()
            .map(|a| a.tanh())
            .collect();
        let next: Vec<T> = (0..hidden)
            .map(|i| (T::one() - update[i]) * h[i] + update[i] * cand[i])
            .collect();
        steps.push(GruStep {
            h_prev: std::mem::replace(&mut h, next),
            update,
            reset,
            cand,
        });
    }
    Ok(GruTrace { steps, output: h })
}

/// Final hidden state of a single-layer GRU started from zero.
pub fn gru_forward<T: Scalar>(inputs: &[&[T]], gru: &GruParams<T>) -> Result<Vec<T>> {
    Ok(gru_trace(inputs, gru)?.output)
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `softmax(W_s q)` over the item catalog.
pub fn next_item_distribution<T: Scalar>(q: &[T], seq_output: &Matrix<T>) -> Vec<T> {
    softmax(&seq_output.mul_vec(q))
}
