use super::TrainState;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter. Fails before touching
/// any state if a gradient is non-finite, and after the update if a
/// parameter became non-finite.
pub fn adam_step<T: Scalar>(
    state: &mut TrainState<T>,
    grads: &ModelParams<T>,
    lr: f64,
) -> Result<()> {
    adam_step_with(state, grads, lr, AdamConfig::default())
}

pub fn adam_step_with<T: Scalar>(
    state: &mut TrainState<T>,
    grads: &ModelParams<T>,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let c1 = T::one() / (T::one() - T::of(cfg.beta1.powi(t)));
    let c2 = T::one() / (T::one() - T::of(cfg.beta2.powi(t)));
    let lr = T::of(lr);
    let eps = T::of(cfg.eps);

    let g_all = grads.tensors();
    let params = state.params.tensors_mut();
    let m_all = state.first_moment.tensors_mut();
    let v_all = state.second_moment.tensors_mut();
    for (((p, m), v), (_, g)) in params.into_iter().zip(m_all).zip(v_all).zip(g_all) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let it = p
            .as_mut_slice()
            .iter_mut()
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
            .zip(g.as_slice());
        for (((p, m), v), &g) in it {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m * c1;
            let v_hat = *v * c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    if let Some(name) = state.params.first_non_finite() {
        return Err(Error::NonFinite(name));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BipartiteGraph, Edge, KeyIndex};
    use crate::model::{init_params, Hyperparams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state() -> TrainState<f64> {
        let g = BipartiteGraph::from_parts(
            KeyIndex::from_keys(vec!["u".into()]).unwrap(),
            KeyIndex::from_keys(vec!["a".into(), "b".into()]).unwrap(),
            vec![Edge {
                user: 0,
                item: 0,
                weight: 1.0,
            }],
        )
        .unwrap();
        let h = Hyperparams {
            embed_dim: 2,
            final_dim: 2,
            ..Hyperparams::default()
        };
        TrainState::new(init_params(&g, &h), ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = state();
        let before = s.params.clone();
        let mut g = s.params.zeros_like();
        g.rank_decoder.set(0, 0, 3.7);
        g.rank_decoder.set(1, 1, -0.002);
        adam_step(&mut s, &g, 0.01).unwrap();
        let d00 = s.params.rank_decoder.get(0, 0) - before.rank_decoder.get(0, 0);
        let d11 = s.params.rank_decoder.get(1, 1) - before.rank_decoder.get(1, 1);
        assert!((d00 + 0.01).abs() < 1e-8, "{d00}");
        assert!((d11 - 0.01).abs() < 1e-7, "{d11}");
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = state();
        let before = s.params.clone();
        let g = s.params.zeros_like();
        adam_step(&mut s, &g, 0.01).unwrap();
        assert_eq!(s.params, before);
    }

    #[test]
    fn non_finite_gradient_fails_fast() {
        let mut s = state();
        let before = s.params.clone();
        let mut g = s.params.zeros_like();
        g.combine.set(0, 0, f64::NAN);
        let err = adam_step(&mut s, &g, 0.01).unwrap_err();
        assert!(err.to_string().contains("combine"));
        assert_eq!(s.params, before);
        assert_eq!(s.step, 0);
    }
}
