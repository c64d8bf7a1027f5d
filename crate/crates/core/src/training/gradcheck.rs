//! Central finite-difference verification of [`compute_gradients`].

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{compute_gradients, objective, LossWeights, TrainQuadruple};
use crate::data::{BipartiteGraph, Edge, InteractionSequence, KeyIndex};
use crate::error::{Error, Result};
use crate::model::{forward, init_params, Hyperparams, ModelParams};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;
/// Instances whose ReLU pre-activations come closer than this to the kink
/// are rejected; finite differences are meaningless there.
const KINK_MARGIN: f64 = 1e-4;

/// A small, fully specified objective.
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: BipartiteGraph,
    pub params: ModelParams<f64>,
    pub weights: LossWeights,
    pub quads: Vec<TrainQuadruple>,
    pub sequences: Vec<InteractionSequence>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_edges: usize,
    pub n_layers: usize,
    pub embed_dim: usize,
    pub final_dim: usize,
    pub seed: u64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            n_users: 5,
            n_items: 5,
            n_edges: 8,
            n_layers: 2,
            embed_dim: 4,
            final_dim: 3,
            seed: 0,
        }
    }
}

fn min_pre_activation(graph: &BipartiteGraph, params: &ModelParams<f64>) -> Result<f64> {
    let emb = forward(graph, params)?;
    Ok(emb
        .caches
        .iter()
        .flat_map(|c| c.user_pre.as_slice().iter().chain(c.item_pre.as_slice()))
        .fold(f64::INFINITY, |m, x| m.min(x.abs())))
}

/// Random graph, parameters, quadruples and sequences with all three losses
/// active. Resamples until no ReLU sits near its kink.
pub fn random_instance(spec: InstanceSpec) -> Result<Instance> {
    let InstanceSpec {
        n_users,
        n_items,
        n_edges,
        ..
    } = spec;
    if n_users == 0 || n_items < 2 || n_edges == 0 || n_edges > n_users * (n_items - 1) {
        return Err(Error::InvalidArgument(format!(
            "cannot build {n_edges} edges on {n_users} users x {n_items} items \
             with a negative left for every user"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _attempt in 0..1000 {
        // every user keeps at least one non-interacted item
        let mut pairs: Vec<(usize, usize)> = (0..n_users)
            .flat_map(|u| (0..n_items).map(move |v| (u, v)))
            .collect();
        pairs.shuffle(&mut rng);
        let mut per_user = vec![0usize; n_users];
        let mut edges = Vec::with_capacity(n_edges);
        for (u, v) in pairs {
            if edges.len() == n_edges {
                break;
            }
            if per_user[u] + 1 < n_items {
                per_user[u] += 1;
                edges.push(Edge {
                    user: u,
                    item: v,
                    weight: f64::from(rng.gen_range(1..=10u32)) * 0.5,
                });
            }
        }
        let keys =
            |p: &str, n: usize| KeyIndex::from_keys((0..n).map(|i| format!("{p}{i}")).collect());
        let graph = BipartiteGraph::from_parts(keys("u", n_users)?, keys("i", n_items)?, edges)?;

        let hyper = Hyperparams {
            embed_dim: spec.embed_dim,
            final_dim: spec.final_dim,
            n_layers: spec.n_layers,
            seed: rng.gen(),
            ..Hyperparams::default()
        };
        let mut params = init_params::<f64>(&graph, &hyper);
        // non-zero biases so their gradients are exercised off the origin
        for b in [
            &mut params.gru.b_update,
            &mut params.gru.b_reset,
            &mut params.gru.b_cand,
        ] {
            b.as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-0.5..0.5));
        }
        if min_pre_activation(&graph, &params)? < KINK_MARGIN {
            continue;
        }

        let mut quads = Vec::new();
        for e in graph.edges() {
            for w in super::sample_negatives(&graph, e.user, 2, &mut rng)? {
                quads.push(TrainQuadruple {
                    u: e.user,
                    v: e.item,
                    phi: e.weight,
                    w,
                });
            }
        }
        let sequences = (0..n_users)
            .map(|u| {
                let len = rng.gen_range(2..=4);
                InteractionSequence {
                    user: u,
                    user_id: format!("u{u}"),
                    items: (0..len).map(|_| rng.gen_range(0..n_items)).collect(),
                }
            })
            .collect();
        let weights = LossWeights::new(
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.5..1.5),
        );
        return Ok(Instance {
            graph,
            params,
            weights,
            quads,
            sequences,
        });
    }
    Err(Error::InvalidArgument(
        "could not draw an instance away from ReLU kinks".into(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub n_coords: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.max_rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_error > self.tolerance)
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tensors {
            let verdict = if t.max_rel_error <= self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            let _ = writeln!(
                s,
                "{:<16} coords={:<4} max_rel={:.3e} max_abs={:.3e} {verdict}",
                t.name, t.n_coords, t.max_rel_error, t.max_abs_error
            );
        }
        s
    }
}

/// Compares `analytic` against central differences of the objective.
pub fn check_against(
    inst: &Instance,
    analytic: &ModelParams<f64>,
    step: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let eval = |p: &ModelParams<f64>| -> Result<f64> {
        Ok(objective(&inst.graph, p, inst.weights, &inst.quads, &inst.sequences)?.total)
    };
    let mut probe = inst.params.clone();
    let names: Vec<String> = inst.params.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic_tensors = analytic.tensors();
    let mut tensors = Vec::with_capacity(names.len());
    for (t, name) in names.into_iter().enumerate() {
        let len = analytic_tensors[t].1.as_slice().len();
        let mut worst_rel = 0.0f64;
        let mut worst_abs = 0.0f64;
        for i in 0..len {
            let orig = probe.tensors_mut()[t].as_slice()[i];
            probe.tensors_mut()[t].as_mut_slice()[i] = orig + step;
            let plus = eval(&probe)?;
            probe.tensors_mut()[t].as_mut_slice()[i] = orig - step;
            let minus = eval(&probe)?;
            probe.tensors_mut()[t].as_mut_slice()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic_tensors[t].1.as_slice()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst_abs = worst_abs.max(abs);
            worst_rel = worst_rel.max(if rel.is_nan() { f64::INFINITY } else { rel });
        }
        tensors.push(TensorCheck {
            name,
            n_coords: len,
            max_rel_error: worst_rel,
            max_abs_error: worst_abs,
        });
    }
    Ok(GradcheckReport { tolerance, tensors })
}

/// Analytic gradient of `inst` checked coordinate by coordinate.
pub fn check_gradients(inst: &Instance, step: f64, tolerance: f64) -> Result<GradcheckReport> {
    let (_, grads) = compute_gradients(
        &inst.graph,
        &inst.params,
        inst.weights,
        &inst.quads,
        &inst.sequences,
    )?;
    check_against(inst, &grads, step, tolerance)
}
