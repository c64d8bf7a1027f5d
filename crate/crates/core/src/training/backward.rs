//! Reverse-mode differentiation of the full objective, written out by hand.
//!
//! Per-quadruple and per-sequence work is split into a fixed number of
//! chunks whose partial sums are added in chunk order, so results do not
//! depend on the worker-thread count.

use rayon::prelude::*;

use super::loss::Losses;
use super::{LossWeights, TrainQuadruple};
use crate::data::{BipartiteGraph, InteractionSequence};
use crate::error::Result;
use crate::matrix::{axpy, dot, Matrix};
use crate::model::{
    floored, forward, gru_trace, log_softmax, GruParams, LayerCache, ModelParams, NodeEmbeddings,
    COSINE_EPS,
};
use crate::scalar::Scalar;

const N_CHUNKS: usize = 8;

fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    let chunks = N_CHUNKS.min(n).max(1);
    (0..chunks)
        .map(|c| (c * n / chunks)..((c + 1) * n / chunks))
        .collect()
}

/// Partial sums for the two quadruple losses.
struct PairPartial<T> {
    rank: T,
    ctr: T,
    /// Σ a·(z_v − z_w) per user, for the ranking decoder.
    rank_user: Matrix<T>,
    /// Σ b·z_item per user, for the click-through decoder.
    ctr_user: Matrix<T>,
    d_item: Matrix<T>,
}

struct SeqPartial<T> {
    loss: T,
    gru: GruParams<T>,
    seq_output: Matrix<T>,
    d_item: Matrix<T>,
}

fn zero_gru<T: Scalar>(g: &GruParams<T>) -> GruParams<T> {
    let z = |m: &Matrix<T>| Matrix::zeros(m.rows(), m.cols());
    GruParams {
        w_update: z(&g.w_update),
        u_update: z(&g.u_update),
        b_update: z(&g.b_update),
        w_reset: z(&g.w_reset),
        u_reset: z(&g.u_reset),
        b_reset: z(&g.b_reset),
        w_cand: z(&g.w_cand),
        u_cand: z(&g.u_cand),
        b_cand: z(&g.b_cand),
    }
}

fn add_gru<T: Scalar>(acc: &mut GruParams<T>, g: &GruParams<T>) {
    acc.w_update.add_assign(&g.w_update);
    acc.u_update.add_assign(&g.u_update);
    acc.b_update.add_assign(&g.b_update);
    acc.w_reset.add_assign(&g.w_reset);
    acc.u_reset.add_assign(&g.u_reset);
    acc.b_reset.add_assign(&g.b_reset);
    acc.w_cand.add_assign(&g.w_cand);
    acc.u_cand.add_assign(&g.u_cand);
    acc.b_cand.add_assign(&g.b_cand);
}

fn pair_chunk<T: Scalar>(
    quads: &[TrainQuadruple],
    emb: &NodeEmbeddings<T>,
    rank_proj: &Matrix<T>,
    ctr_proj: &Matrix<T>,
    weights: LossWeights,
    inv_n: T,
) -> PairPartial<T> {
    let (z_user, z_item) = (&emb.z_user, &emb.z_item);
    let d = z_item.cols();
    let mut p = PairPartial {
        rank: T::zero(),
        ctr: T::zero(),
        rank_user: Matrix::zeros(z_user.rows(), d),
        ctr_user: Matrix::zeros(z_user.rows(), d),
        d_item: Matrix::zeros(z_item.rows(), d),
    };
    let lam_rank = T::of(weights.rank) * inv_n;
    let lam_ctr = T::of(weights.ctr) * inv_n;
    let mut diff = vec![T::zero(); d];
    for q in quads {
        let phi = T::of(q.phi);
        let (zv, zw) = (z_item.row(q.v), z_item.row(q.w));

        let pr = rank_proj.row(q.u);
        for ((o, &a), &b) in diff.iter_mut().zip(zv).zip(zw) {
            *o = a - b;
        }
        let delta = dot(pr, &diff);
        p.rank += phi * (-delta).softplus();
        if lam_rank != T::zero() {
            let a = -lam_rank * phi * (-delta).sigmoid();
            axpy(a, &diff, p.rank_user.row_mut(q.u));
            axpy(a, pr, p.d_item.row_mut(q.v));
            axpy(-a, pr, p.d_item.row_mut(q.w));
        }

        let pc = ctr_proj.row(q.u);
        let x = dot(pc, zv);
        let y = dot(pc, zw);
        p.ctr += phi * (-x).softplus() + y.softplus();
        if lam_ctr != T::zero() {
            let b_pos = -lam_ctr * phi * (-x).sigmoid();
            let b_neg = lam_ctr * y.sigmoid();
            let row = p.ctr_user.row_mut(q.u);
            axpy(b_pos, zv, row);
            axpy(b_neg, zw, row);
            axpy(b_pos, pc, p.d_item.row_mut(q.v));
            axpy(b_neg, pc, p.d_item.row_mut(q.w));
        }
    }
    p
}

fn seq_chunk<T: Scalar>(
    sequences: &[InteractionSequence],
    z_item: &Matrix<T>,
    gru: &GruParams<T>,
    seq_output: &Matrix<T>,
    scale: T,
) -> Result<SeqPartial<T>> {
    let d = z_item.cols();
    let mut p = SeqPartial {
        loss: T::zero(),
        gru: zero_gru(gru),
        seq_output: Matrix::zeros(seq_output.rows(), seq_output.cols()),
        d_item: Matrix::zeros(z_item.rows(), d),
    };
    let hidden = gru.u_update.rows();
    let mut traces = Vec::with_capacity(sequences.len());
    let mut outputs = Matrix::zeros(sequences.len(), hidden);
    for (i, s) in sequences.iter().enumerate() {
        let prefix = &s.items[..s.items.len() - 1];
        let inputs: Vec<&[T]> = prefix.iter().map(|&v| z_item.row(v)).collect();
        let trace = gru_trace(&inputs, gru)?;
        outputs.row_mut(i).copy_from_slice(&trace.output);
        traces.push(trace);
    }
    let logits = outputs.matmul_t(seq_output);
    // d(-log p_target)/d logits = softmax - onehot
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    for (i, s) in sequences.iter().enumerate() {
        let target = *s.items.last().expect("sequence length >= 2");
        let lsm = log_softmax(logits.row(i));
        p.loss -= lsm[target];
        let row = dlogits.row_mut(i);
        for (g, &l) in row.iter_mut().zip(&lsm) {
            *g = l.exp() * scale;
        }
        row[target] -= scale;
    }
    if scale == T::zero() {
        return Ok(p);
    }
    dlogits.t_matmul_into(&outputs, &mut p.seq_output);
    let d_outputs = dlogits.matmul(seq_output);

    for ((i, s), trace) in sequences.iter().enumerate().zip(&traces) {
        let prefix = &s.items[..s.items.len() - 1];
        let inputs: Vec<&[T]> = prefix.iter().map(|&v| z_item.row(v)).collect();
        let mut dh = d_outputs.row(i).to_vec();

        for (t, step) in trace.steps.iter().enumerate().rev() {
            let x = inputs[t];
            let mut dh_prev = vec![T::zero(); hidden];
            let mut d_update = vec![T::zero(); hidden];
            let mut d_cand_pre = vec![T::zero(); hidden];
            for i in 0..hidden {
                let z = step.update[i];
                let n = step.cand[i];
                d_update[i] = dh[i] * (n - step.h_prev[i]) * z * (T::one() - z);
                d_cand_pre[i] = dh[i] * z * (T::one() - n * n);
                dh_prev[i] = dh[i] * (T::one() - z);
            }
            let gated: Vec<T> = step
                .reset
                .iter()
                .zip(&step.h_prev)
                .map(|(&r, &h)| r * h)
                .collect();
            let mut d_gated = vec![T::zero(); hidden];
            gru.u_cand.t_mul_vec_into(&d_cand_pre, &mut d_gated);
            let mut d_reset = vec![T::zero(); hidden];
            for i in 0..hidden {
                let r = step.reset[i];
                d_reset[i] = d_gated[i] * step.h_prev[i] * r * (T::one() - r);
                dh_prev[i] += d_gated[i] * r;
            }

            let g = &mut p.gru;
            g.w_update.add_outer(T::one(), &d_update, x);
            g.u_update.add_outer(T::one(), &d_update, &step.h_prev);
            axpy(T::one(), &d_update, g.b_update.as_mut_slice());
            g.w_reset.add_outer(T::one(), &d_reset, x);
            g.u_reset.add_outer(T::one(), &d_reset, &step.h_prev);
            axpy(T::one(), &d_reset, g.b_reset.as_mut_slice());
            g.w_cand.add_outer(T::one(), &d_cand_pre, x);
            g.u_cand.add_outer(T::one(), &d_cand_pre, &gated);
            axpy(T::one(), &d_cand_pre, g.b_cand.as_mut_slice());

            gru.u_update.t_mul_vec_into(&d_update, &mut dh_prev);
            gru.u_reset.t_mul_vec_into(&d_reset, &mut dh_prev);

            let dx = p.d_item.row_mut(prefix[t]);
            gru.w_update.t_mul_vec_into(&d_update, dx);
            gru.w_reset.t_mul_vec_into(&d_reset, dx);
            gru.w_cand.t_mul_vec_into(&d_cand_pre, dx);

            dh = dh_prev;
        }
    }
    Ok(p)
}

/// Backward through one convolution layer. `d_user`/`d_item` hold the
/// gradient w.r.t. this layer's output; returns the gradient w.r.t. its
/// inputs and accumulates into `d_w1`.
#[allow(clippy::too_many_arguments)]
fn layer_backward<T: Scalar>(
    graph: &BipartiteGraph,
    edge_scale: &[T],
    cache: &LayerCache<T>,
    e_user: &Matrix<T>,
    e_item: &Matrix<T>,
    w1: &Matrix<T>,
    d_user: &Matrix<T>,
    d_item: &Matrix<T>,
    d_w1: &mut Matrix<T>,
) -> (Matrix<T>, Matrix<T>) {
    let dim = e_user.cols();
    let relu_grad = |d: &Matrix<T>, pre: &Matrix<T>| {
        let mut out = d.clone();
        out.as_mut_slice()
            .iter_mut()
            .zip(pre.as_slice())
            .for_each(|(g, &p)| {
                if p <= T::zero() {
                    *g = T::zero();
                }
            });
        out
    };
    let d_user_pre = relu_grad(d_user, &cache.user_pre);
    let d_item_pre = relu_grad(d_item, &cache.item_pre);
    d_user_pre.t_matmul_into(&cache.user_hidden, d_w1);
    d_item_pre.t_matmul_into(&cache.item_hidden, d_w1);

    let d_user_hidden = d_user_pre.matmul(w1);
    let d_item_hidden = d_item_pre.matmul(w1);
    let mut d_user_in = d_user_hidden.col_block(0, dim);
    let mut d_item_in = d_item_hidden.col_block(0, dim);
    let d_user_agg = d_user_hidden.col_block(dim, dim);
    let d_item_agg = d_item_hidden.col_block(dim, dim);

    let edges = graph.edges();
    // dL/dc per edge, then dL/dcos
    let d_cos: Vec<T> = edges
        .par_iter()
        .zip(edge_scale.par_iter())
        .map(|(e, &s)| {
            let dc = dot(d_user_agg.row(e.user), e_item.row(e.item))
                + dot(d_item_agg.row(e.item), e_user.row(e.user));
            s * dc
        })
        .collect();

    // ∂cos/∂e_u = e_v/(|e_u||e_v|) − cos·e_u/|e_u|², with the floored norm
    // treated as constant below the floor.
    let norm_term = |raw: T| {
        if raw > T::of(COSINE_EPS) {
            T::one() / (raw * raw)
        } else {
            T::zero()
        }
    };

    d_user_in
        .as_mut_slice()
        .par_chunks_mut(dim.max(1))
        .enumerate()
        .for_each(|(u, out)| {
            let nu = floored(cache.user_norm[u]);
            let self_coef = norm_term(cache.user_norm[u]);
            for id in graph.user_edge_range(u) {
                let v = edges[id].item;
                let c = cache.coeff[id];
                axpy(c, d_item_agg.row(v), out);
                let dcos = d_cos[id];
                let nv = floored(cache.item_norm[v]);
                axpy(dcos / (nu * nv), e_item.row(v), out);
                axpy(-dcos * cache.cosine[id] * self_coef, e_user.row(u), out);
            }
        });
    d_item_in
        .as_mut_slice()
        .par_chunks_mut(dim.max(1))
        .enumerate()
        .for_each(|(v, out)| {
            let nv = floored(cache.item_norm[v]);
            let self_coef = norm_term(cache.item_norm[v]);
            for &id in graph.item_edge_ids(v) {
                let u = edges[id].user;
                let c = cache.coeff[id];
                axpy(c, d_user_agg.row(u), out);
                let dcos = d_cos[id];
                let nu = floored(cache.user_norm[u]);
                axpy(dcos / (nu * nv), e_user.row(u), out);
                axpy(-dcos * cache.cosine[id] * self_coef, e_item.row(v), out);
            }
        });
    (d_user_in, d_item_in)
}

/// Exact gradient of `λ1·L1 + λ2·L2 + λ3·L3` with respect to every
/// parameter, together with the loss values at `params`.
pub fn compute_gradients<T: Scalar>(
    graph: &BipartiteGraph,
    params: &ModelParams<T>,
    weights: LossWeights,
    quads: &[TrainQuadruple],
    sequences: &[InteractionSequence],
) -> Result<(Losses, ModelParams<T>)> {
    let emb = forward(graph, params)?;
    let mut grads = params.zeros_like();
    let (n_users, n_items) = (graph.n_users(), graph.n_items());
    let d = params.final_dim();
    let mut d_z_user = Matrix::zeros(n_users, d);
    let mut d_z_item = Matrix::zeros(n_items, d);

    // quadruple losses
    let mut rank_sum = T::zero();
    let mut ctr_sum = T::zero();
    if !quads.is_empty() {
        let inv_n = T::one() / T::of(quads.len() as f64);
        let rank_proj = emb.z_user.matmul(&params.rank_decoder);
        let ctr_proj = emb.z_user.matmul(&params.ctr_decoder);
        let partials: Vec<PairPartial<T>> = chunk_ranges(quads.len())
            .into_par_iter()
            .map(|r| pair_chunk(&quads[r], &emb, &rank_proj, &ctr_proj, weights, inv_n))
            .collect();
        let mut rank_user = Matrix::zeros(n_users, d);
        let mut ctr_user = Matrix::zeros(n_users, d);
        for p in partials {
            rank_sum += p.rank;
            ctr_sum += p.ctr;
            rank_user.add_assign(&p.rank_user);
            ctr_user.add_assign(&p.ctr_user);
            d_z_item.add_assign(&p.d_item);
        }
        rank_sum *= inv_n;
        ctr_sum *= inv_n;
        emb.z_user
            .t_matmul_into(&rank_user, &mut grads.rank_decoder);
        emb.z_user.t_matmul_into(&ctr_user, &mut grads.ctr_decoder);
        d_z_user.add_assign(&rank_user.matmul_t(&params.rank_decoder));
        d_z_user.add_assign(&ctr_user.matmul_t(&params.ctr_decoder));
    }

    // sequence loss
    let mut seq_sum = T::zero();
    if !sequences.is_empty() {
        let inv_s = T::one() / T::of(sequences.len() as f64);
        let scale = T::of(weights.seq) * inv_s;
        let partials: Vec<Result<SeqPartial<T>>> = chunk_ranges(sequences.len())
            .into_par_iter()
            .map(|r| {
                seq_chunk(
                    &sequences[r],
                    &emb.z_item,
                    &params.gru,
                    &params.seq_output,
                    scale,
                )
            })
            .collect();
        for p in partials {
            let p = p?;
            seq_sum += p.loss;
            add_gru(&mut grads.gru, &p.gru);
            grads.seq_output.add_assign(&p.seq_output);
            d_z_item.add_assign(&p.d_item);
        }
        seq_sum *= inv_s;
    }

    // layer combination
    d_z_user.t_matmul_into(&emb.user_concat, &mut grads.combine);
    d_z_item.t_matmul_into(&emb.item_concat, &mut grads.combine);
    let d_user_concat = d_z_user.matmul(&params.combine);
    let d_item_concat = d_z_item.matmul(&params.combine);

    // convolution layers, last to first
    let dim = params.embed_dim();
    let n_layers = params.n_layers();
    if n_layers == 0 {
        grads.user_embedding = d_user_concat;
        grads.item_embedding = d_item_concat;
        return Ok((losses_of(rank_sum, ctr_sum, seq_sum, weights), grads));
    }
    let mut d_user = d_user_concat.col_block((n_layers - 1) * dim, dim);
    let mut d_item = d_item_concat.col_block((n_layers - 1) * dim, dim);
    for l in (0..n_layers).rev() {
        let (du, di) = layer_backward(
            graph,
            &emb.edge_scale,
            &emb.caches[l],
            &emb.user_layers[l],
            &emb.item_layers[l],
            &params.conv[l],
            &d_user,
            &d_item,
            &mut grads.conv[l],
        );
        d_user = du;
        d_item = di;
        if l > 0 {
            d_user.add_assign(&d_user_concat.col_block((l - 1) * dim, dim));
            d_item.add_assign(&d_item_concat.col_block((l - 1) * dim, dim));
        }
    }
    grads.user_embedding = d_user;
    grads.item_embedding = d_item;

    Ok((losses_of(rank_sum, ctr_sum, seq_sum, weights), grads))
}

fn losses_of<T: Scalar>(rank: T, ctr: T, seq: T, weights: LossWeights) -> Losses {
    let total = T::of(weights.rank) * rank + T::of(weights.ctr) * ctr + T::of(weights.seq) * seq;
    Losses {
        rank: rank.as_f64(),
        ctr: ctr.as_f64(),
        seq: seq.as_f64(),
        total: total.as_f64(),
    }
}
