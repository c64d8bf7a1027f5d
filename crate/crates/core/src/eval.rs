//! Offline ranking metrics over held-out interactions.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BipartiteGraph, InteractionRecord};
use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::model::{forward, ModelParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub recall: f64,
    pub urecall: f64,
    pub ndcg: f64,
    pub n_users_evaluated: usize,
}

impl MetricsReport {
    /// `k, recall, urecall, ndcg, n_users`
    pub fn to_line(&self) -> String {
        format!(
            "{}, {}, {}, {}, {}",
            self.k, self.recall, self.urecall, self.ndcg, self.n_users_evaluated
        )
    }

    /// Key-value document (TOML).
    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("metrics serialize")
    }

    pub fn from_document(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("metrics report: {e}")))
    }
}

/// Affinity of one user against every item, computed as `(z_uᵀ Q1) · z_v`.
/// Evaluation and batch generation both score through this function.
pub fn user_scores<T: Scalar>(z_user_row: &[T], z_item: &Matrix<T>, q1: &Matrix<T>) -> Vec<T> {
    let mut proj = vec![T::zero(); q1.cols()];
    for (i, &a) in z_user_row.iter().enumerate() {
        axpy(a, q1.row(i), &mut proj);
    }
    (0..z_item.rows())
        .map(|v| dot(&proj, z_item.row(v)))
        .collect()
}

/// Descending score, ties by ascending item id.
#[inline]
pub fn rank_order<T: Scalar>(a: (T, usize), b: (T, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Top-`k` unseen items for user `u`. `seen` must be sorted.
pub fn rank_items<T: Scalar>(
    u: usize,
    z_user: &Matrix<T>,
    z_item: &Matrix<T>,
    q1: &Matrix<T>,
    seen: &[usize],
    k: usize,
) -> Vec<usize> {
    debug_assert!(seen.windows(2).all(|w| w[0] < w[1]));
    let scores = user_scores(z_user.row(u), z_item, q1);
    let mut order: Vec<(T, usize)> = scores
        .into_iter()
        .enumerate()
        .filter(|(v, _)| seen.binary_search(v).is_err())
        .map(|(v, s)| (s, v))
        .collect();
    if k < order.len() {
        order.select_nth_unstable_by(k, |&a, &b| rank_order(a, b));
        order.truncate(k);
    }
    order.sort_by(|&a, &b| rank_order(a, b));
    order.into_iter().map(|(_, v)| v).collect()
}

pub fn urecall_at_k(topk: &[usize], positives: &BTreeSet<usize>) -> f64 {
    if topk.iter().any(|v| positives.contains(v)) {
        1.0
    } else {
        0.0
    }
}

pub fn recall_at_k(topk: &[usize], positives: &BTreeSet<usize>) -> f64 {
    if positives.is_empty() {
        return 0.0;
    }
    let hits = topk.iter().filter(|v| positives.contains(v)).count();
    hits as f64 / positives.len() as f64
}

pub fn ndcg_at_k(topk: &[usize], positives: &BTreeSet<usize>, k: usize) -> f64 {
    if positives.is_empty() {
        return 0.0;
    }
    let dcg: f64 = topk
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, v)| positives.contains(v))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(positives.len()))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    dcg / idcg
}

/// Held-out positives per dense user id.
pub fn positives_by_user(
    graph: &BipartiteGraph,
    records: &[InteractionRecord],
) -> Result<Vec<BTreeSet<usize>>> {
    let mut out = vec![BTreeSet::new(); graph.n_users()];
    for r in records {
        let u = graph.users().id(&r.user_id).ok_or_else(|| {
            Error::InvalidArgument(format!("held-out record for unknown user `{}`", r.user_id))
        })?;
        let v = graph.items().id(&r.item_id).ok_or_else(|| {
            Error::InvalidArgument(format!("held-out record for unknown item `{}`", r.item_id))
        })?;
        out[u].insert(v);
    }
    Ok(out)
}

/// Metrics at several cut-offs from precomputed embeddings. Users without
/// held-out positives or without training edges are skipped.
pub fn evaluate_embeddings<T: Scalar>(
    graph: &BipartiteGraph,
    z_user: &Matrix<T>,
    z_item: &Matrix<T>,
    q1: &Matrix<T>,
    records: &[InteractionRecord],
    ks: &[usize],
) -> Result<Vec<MetricsReport>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "cut-offs must be >= 1, got {ks:?}"
        )));
    }
    let positives = positives_by_user(graph, records)?;
    let k_max = *ks.iter().max().unwrap();
    let users: Vec<usize> = (0..graph.n_users())
        .filter(|&u| !positives[u].is_empty() && graph.user_degree(u) > 0)
        .collect();
    if users.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }
    let seen = graph.seen_sets();
    let per_user: Vec<Vec<[f64; 3]>> = users
        .par_iter()
        .map(|&u| {
            let top = rank_items(u, z_user, z_item, q1, &seen[u], k_max);
            let pos = &positives[u];
            ks.iter()
                .map(|&k| {
                    let cut = &top[..k.min(top.len())];
                    [
                        recall_at_k(cut, pos),
                        urecall_at_k(cut, pos),
                        ndcg_at_k(cut, pos, k),
                    ]
                })
                .collect()
        })
        .collect();
    let n = users.len() as f64;
    Ok(ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let mut sums = [0.0f64; 3];
            for m in &per_user {
                for j in 0..3 {
                    sums[j] += m[i][j];
                }
            }
            MetricsReport {
                k,
                recall: sums[0] / n,
                urecall: sums[1] / n,
                ndcg: sums[2] / n,
                n_users_evaluated: users.len(),
            }
        })
        .collect())
}

/// Runs the forward pass and reports metrics at cut-off `k`. Every item is
/// a candidate; only training interactions are filtered.
pub fn evaluate<T: Scalar>(
    graph: &BipartiteGraph,
    params: &ModelParams<T>,
    records: &[InteractionRecord],
    k: usize,
) -> Result<MetricsReport> {
    let emb = forward(graph, params)?;
    let mut out = evaluate_embeddings(
        graph,
        &emb.z_user,
        &emb.z_item,
        &params.rank_decoder,
        records,
        &[k],
    )?;
    Ok(out.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    fn one_user(scores: &[f64]) -> (Matrix<f64>, Matrix<f64>, Matrix<f64>) {
        let zu = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let zv = Matrix::from_rows(&scores.iter().map(|&s| vec![s]).collect::<Vec<_>>()).unwrap();
        (zu, zv, Matrix::identity(1))
    }

    #[test]
    fn ranks_by_score() {
        let (zu, zv, q) = one_user(&[0.1, 0.9, 0.5]);
        assert_eq!(rank_items(0, &zu, &zv, &q, &[], 2), vec![1, 2]);
    }

    #[test]
    fn filters_seen() {
        let (zu, zv, q) = one_user(&[0.1, 0.9, 0.5, 0.7]);
        assert_eq!(rank_items(0, &zu, &zv, &q, &[1], 2), vec![3, 2]);
        assert_eq!(
            rank_items(0, &zu, &zv, &q, &[0, 1, 2, 3], 2),
            Vec::<usize>::new()
        );
    }

    #[test]
    fn ties_by_id() {
        let (zu, zv, q) = one_user(&[0.3; 5]);
        assert_eq!(rank_items(0, &zu, &zv, &q, &[2], 3), vec![0, 1, 3]);
    }

    #[test]
    fn urecall_cases() {
        assert_eq!(urecall_at_k(&[4, 5, 6], &set(&[6])), 1.0);
        assert_eq!(urecall_at_k(&[4, 5, 6], &set(&[7])), 0.0);
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_k(&[1, 9], &set(&[1, 2])), 0.5);
        assert_eq!(recall_at_k(&[2, 1, 3], &set(&[1, 2])), 1.0);
        let top: Vec<usize> = (0..10).collect();
        assert!((recall_at_k(&top, &set(&[3, 7, 42])) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at_k(&[5, 1, 2], &set(&[5]), 10), 1.0);
        let top: Vec<usize> = (0..10).collect();
        assert!((ndcg_at_k(&top, &set(&[1]), 10) - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&top, &set(&[11]), 10), 0.0);
    }

    #[test]
    fn report_serialization() {
        let r = MetricsReport {
            k: 10,
            recall: 0.5,
            urecall: 1.0,
            ndcg: 0.25,
            n_users_evaluated: 3,
        };
        assert_eq!(r.to_line(), "10, 0.5, 1, 0.25, 3");
        assert_eq!(MetricsReport::from_document(&r.to_document()).unwrap(), r);
    }
}
