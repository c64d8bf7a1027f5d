use super::{LossWeights, TrainQuadruple};
use crate::data::{BipartiteGraph, InteractionSequence};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::model::{
    affinity, ctr_logit, forward, gru_forward, log_softmax, GruParams, ModelParams,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Losses {
    pub rank: f64,
    pub ctr: f64,
    pub seq: f64,
    pub total: f64,
}

/// Behavior-weighted pairwise ranking loss
/// `-(1/|O|) Σ φ ln σ(g1(u,v) - g1(u,w))`.
pub fn bpr_loss<T: Scalar>(
    quads: &[TrainQuadruple],
    z_user: &Matrix<T>,
    z_item: &Matrix<T>,
    q1: &Matrix<T>,
) -> T {
    if quads.is_empty() {
        return T::zero();
    }
    let sum: T = quads
        .iter()
        .map(|q| {
            let zu = z_user.row(q.u);
            let diff = affinity(zu, z_item.row(q.v), q1) - affinity(zu, z_item.row(q.w), q1);
            T::of(q.phi) * (-diff).softplus()
        })
        .sum();
    sum / T::of(quads.len() as f64)
}

/// Click-through cross-entropy: positive term weighted by φ, sampled
/// negative term by 1.
pub fn ctr_loss<T: Scalar>(
    quads: &[TrainQuadruple],
    z_user: &Matrix<T>,
    z_item: &Matrix<T>,
    q2: &Matrix<T>,
) -> T {
    if quads.is_empty() {
        return T::zero();
    }
    let sum: T = quads
        .iter()
        .map(|q| {
            let zu = z_user.row(q.u);
            let pos = ctr_logit(zu, z_item.row(q.v), q2);
            let neg = ctr_logit(zu, z_item.row(q.w), q2);
            // -log σ(x) = softplus(-x); -log(1 - σ(y)) = softplus(y)
            T::of(q.phi) * (-pos).softplus() + neg.softplus()
        })
        .sum();
    sum / T::of(quads.len() as f64)
}

/// Mean negative log-likelihood of each sequence's last item given the
/// earlier ones.
pub fn seq_loss<T: Scalar>(
    sequences: &[InteractionSequence],
    z_item: &Matrix<T>,
    gru: &GruParams<T>,
    seq_output: &Matrix<T>,
) -> Result<T> {
    if sequences.is_empty() {
        return Ok(T::zero());
    }
    let mut sum = T::zero();
    for s in sequences {
        let (&target, prefix) = s.items.split_last().expect("sequence length >= 2");
        let inputs: Vec<&[T]> = prefix.iter().map(|&v| z_item.row(v)).collect();
        let q = gru_forward(&inputs, gru)?;
        sum -= log_softmax(&seq_output.mul_vec(&q))[target];
    }
    Ok(sum / T::of(sequences.len() as f64))
}

pub fn total_loss<T: Scalar>(l1: T, l2: T, l3: T, lambda1: T, lambda2: T, lambda3: T) -> T {
    lambda1 * l1 + lambda2 * l2 + lambda3 * l3
}

/// Forward pass plus all three losses, computed straight from the
/// definitions.
pub fn objective<T: Scalar>(
    graph: &BipartiteGraph,
    params: &ModelParams<T>,
    weights: LossWeights,
    quads: &[TrainQuadruple],
    sequences: &[InteractionSequence],
) -> Result<Losses> {
    let emb = forward(graph, params)?;
    let l1 = bpr_loss(quads, &emb.z_user, &emb.z_item, &params.rank_decoder);
    let l2 = ctr_loss(quads, &emb.z_user, &emb.z_item, &params.ctr_decoder);
    let l3 = seq_loss(sequences, &emb.z_item, &params.gru, &params.seq_output)?;
    let total = total_loss(
        l1,
        l2,
        l3,
        T::of(weights.rank),
        T::of(weights.ctr),
        T::of(weights.seq),
    );
    Ok(Losses {
        rank: l1.as_f64(),
        ctr: l2.as_f64(),
        seq: l3.as_f64(),
        total: total.as_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn quad(phi: f64) -> TrainQuadruple {
        TrainQuadruple {
            u: 0,
            v: 0,
            phi,
            w: 1,
        }
    }

    #[test]
    fn bpr_equal_scores() {
        let zu = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let zv = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let q = Matrix::identity(2);
        assert!((bpr_loss(&[quad(1.0)], &zu, &zv, &q) - LN_2).abs() < 1e-12);
        assert!((bpr_loss(&[quad(2.0)], &zu, &zv, &q) - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn bpr_saturates() {
        let zu = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let zv = Matrix::from_rows(&[vec![50.0], vec![0.0]]).unwrap();
        let q = Matrix::identity(1);
        let l = bpr_loss(&[quad(1.0)], &zu, &zv, &q);
        assert!((0.0..1e-20).contains(&l));
    }

    #[test]
    fn ctr_zero_logits() {
        let zu = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let zv = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let q = Matrix::identity(2);
        assert!((ctr_loss(&[quad(1.0)], &zu, &zv, &q) - 2.0 * LN_2).abs() < 1e-12);
        assert!((ctr_loss(&[quad(3.0)], &zu, &zv, &q) - 4.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn ctr_saturates() {
        let zu = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let zv = Matrix::from_rows(&[vec![50.0], vec![-50.0]]).unwrap();
        let q = Matrix::identity(1);
        assert!(ctr_loss(&[quad(1.0)], &zu, &zv, &q) < 1e-20);
    }

    #[test]
    fn total_cases() {
        assert_eq!(total_loss(0.5, 0.25, 0.25, 1.0, 1.0, 1.0), 1.0);
        assert_eq!(total_loss(0.3, 0.7, 0.125, 0.0, 0.0, 1.0), 0.125);
        assert!((total_loss(1.0, 1.0, 1.0, 0.9, 1.0, 1.1) - 3.0f64).abs() < 1e-15);
    }
}
