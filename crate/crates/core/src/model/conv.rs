use rayon::prelude::*;

use super::params::ModelParams;
use crate::data::BipartiteGraph;
use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, norm, Matrix};
use crate::scalar::Scalar;

/// Floor applied to embedding norms inside the cosine term.
pub const COSINE_EPS: f64 = 1e-12;

const PAR_MIN: usize = 512;

#[inline]
pub(crate) fn floored<T: Scalar>(n: T) -> T {
    n.max(T::of(COSINE_EPS))
}

/// Message scale for edge (u, v):
/// `sqrt(φ / (deg_u·deg_v)) · cos(e_u, e_v)`.
pub fn scaling_factor<T: Scalar>(e_u: &[T], e_v: &[T], deg_u: usize, deg_v: usize, phi: T) -> T {
    let s = (phi / T::of((deg_u * deg_v) as f64)).sqrt();
    s * dot(e_u, e_v) / (floored(norm(e_u)) * floored(norm(e_v)))
}

/// Intermediates of one convolution layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    /// Cosine term per edge (indexed like `graph.edges()`).
    pub cosine: Vec<T>,
    /// Full coefficient `c_uv` per edge.
    pub coeff: Vec<T>,
    /// Unfloored norms of the layer inputs.
    pub user_norm: Vec<T>,
    pub item_norm: Vec<T>,
    /// `[e^(l-1) | Σ m]`, |U| × 2d̄ and |V| × 2d̄.
    pub user_hidden: Matrix<T>,
    pub item_hidden: Matrix<T>,
    /// Pre-activation `W1 h`.
    pub user_pre: Matrix<T>,
    pub item_pre: Matrix<T>,
}

/// Output of [`forward`]: per-layer embeddings (layer 0 first), the combined
/// embeddings and everything the gradient computation needs.
#[derive(Debug, Clone)]
pub struct NodeEmbeddings<T> {
    pub user_layers: Vec<Matrix<T>>,
    pub item_layers: Vec<Matrix<T>>,
    pub z_user: Matrix<T>,
    pub z_item: Matrix<T>,
    pub caches: Vec<LayerCache<T>>,
    /// `sqrt(φ / (deg_u·deg_v))` per edge.
    pub edge_scale: Vec<T>,
    /// `[e^(1) | … | e^(L)]` per side.
    pub user_concat: Matrix<T>,
    pub item_concat: Matrix<T>,
}

pub(crate) fn edge_scales<T: Scalar>(graph: &BipartiteGraph) -> Vec<T> {
    graph
        .edges()
        .iter()
        .map(|e| {
            let deg = (graph.user_degree(e.user) * graph.item_degree(e.item)) as f64;
            T::of((e.weight / deg).sqrt())
        })
        .collect()
}

fn row_norms<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    (0..m.rows()).map(|r| norm(m.row(r))).collect()
}

fn layer_forward<T: Scalar>(
    graph: &BipartiteGraph,
    edge_scale: &[T],
    e_user: &Matrix<T>,
    e_item: &Matrix<T>,
    w1: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>, LayerCache<T>) {
    let dim = e_user.cols();
    let user_norm = row_norms(e_user);
    let item_norm = row_norms(e_item);
    let edges = graph.edges();

    let cos_of = |i: usize| {
        let e = &edges[i];
        dot(e_user.row(e.user), e_item.row(e.item))
            / (floored(user_norm[e.user]) * floored(item_norm[e.item]))
    };
    let cosine: Vec<T> = if edges.len() >= PAR_MIN {
        (0..edges.len()).into_par_iter().map(cos_of).collect()
    } else {
        (0..edges.len()).map(cos_of).collect()
    };
    let coeff: Vec<T> = cosine
        .iter()
        .zip(edge_scale)
        .map(|(&c, &s)| c * s)
        .collect();

    let mut user_agg = Matrix::zeros(graph.n_users(), dim);
    user_agg
        .as_mut_slice()
        .par_chunks_mut(dim.max(1))
        .enumerate()
        .for_each(|(u, out)| {
            for id in graph.user_edge_range(u) {
                axpy(coeff[id], e_item.row(edges[id].item), out);
            }
        });
    let mut item_agg = Matrix::zeros(graph.n_items(), dim);
    item_agg
        .as_mut_slice()
        .par_chunks_mut(dim.max(1))
        .enumerate()
        .for_each(|(v, out)| {
            for &id in graph.item_edge_ids(v) {
                axpy(coeff[id], e_user.row(edges[id].user), out);
            }
        });

    let user_hidden = Matrix::hconcat(&[e_user, &user_agg]);
    let item_hidden = Matrix::hconcat(&[e_item, &item_agg]);
    let user_pre = user_hidden.matmul_t(w1);
    let item_pre = item_hidden.matmul_t(w1);
    let relu = |m: &Matrix<T>| {
        let mut out = m.clone();
        out.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = x.max(T::zero()));
        out
    };
    let user_next = relu(&user_pre);
    let item_next = relu(&item_pre);
    (
        user_next,
        item_next,
        LayerCache {
            cosine,
            coeff,
            user_norm,
            item_norm,
            user_hidden,
            item_hidden,
            user_pre,
            item_pre,
        },
    )
}

fn check_conv_shapes<T: Scalar>(
    graph: &BipartiteGraph,
    e_user: &Matrix<T>,
    e_item: &Matrix<T>,
    w1: &Matrix<T>,
) -> Result<()> {
    let dim = e_user.cols();
    if e_user.rows() != graph.n_users()
        || e_item.rows() != graph.n_items()
        || e_item.cols() != dim
        || w1.shape() != (dim, 2 * dim)
    {
        return Err(Error::Shape(format!(
            "convolution inputs {:?}/{:?} with transform {:?} on a {}x{} graph",
            e_user.shape(),
            e_item.shape(),
            w1.shape(),
            graph.n_users(),
            graph.n_items()
        )));
    }
    Ok(())
}

/// One synchronous propagation step: every node aggregates scaled neighbor
/// embeddings from the previous layer, concatenates them after its own
/// embedding, and applies `ReLU(W1 h)`. Both sides share `w1`.
pub fn convolve_layer<T: Scalar>(
    graph: &BipartiteGraph,
    e_user: &Matrix<T>,
    e_item: &Matrix<T>,
    w1: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    check_conv_shapes(graph, e_user, e_item, w1)?;
    let (u, v, _) = layer_forward(graph, &edge_scales(graph), e_user, e_item, w1);
    Ok((u, v))
}

/// Concatenates layers 1..L per node and maps them through the shared
/// combiner `w2` (d × L·d̄).
pub fn combine_layers<T: Scalar>(
    user_layers: &[Matrix<T>],
    item_layers: &[Matrix<T>],
    w2: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let (uc, ic) = concat_layers(user_layers, item_layers, w2)?;
    Ok((uc.matmul_t(w2), ic.matmul_t(w2)))
}

fn concat_layers<T: Scalar>(
    user_layers: &[Matrix<T>],
    item_layers: &[Matrix<T>],
    w2: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if user_layers.len() != item_layers.len() || user_layers.is_empty() {
        return Err(Error::Shape(format!(
            "{} user layers vs {} item layers",
            user_layers.len(),
            item_layers.len()
        )));
    }
    let width: usize = user_layers.iter().map(Matrix::cols).sum();
    let item_width: usize = item_layers.iter().map(Matrix::cols).sum();
    if width != w2.cols() || item_width != w2.cols() {
        return Err(Error::Shape(format!(
            "{} concatenated layers of total width {width} do not match combiner {:?}",
            user_layers.len(),
            w2.shape()
        )));
    }
    let ur: Vec<&Matrix<T>> = user_layers.iter().collect();
    let ir: Vec<&Matrix<T>> = item_layers.iter().collect();
    Ok((Matrix::hconcat(&ur), Matrix::hconcat(&ir)))
}

/// Full forward pass from the embedding tables to the combined embeddings.
pub fn forward<T: Scalar>(
    graph: &BipartiteGraph,
    params: &ModelParams<T>,
) -> Result<NodeEmbeddings<T>> {
    let edge_scale = edge_scales::<T>(graph);
    let mut user_layers = vec![params.user_embedding.clone()];
    let mut item_layers = vec![params.item_embedding.clone()];
    let mut caches = Vec::with_capacity(params.conv.len());
    for w1 in &params.conv {
        let (eu, ev) = (user_layers.last().unwrap(), item_layers.last().unwrap());
        check_conv_shapes(graph, eu, ev, w1)?;
        let (nu, nv, cache) = layer_forward(graph, &edge_scale, eu, ev, w1);
        user_layers.push(nu);
        item_layers.push(nv);
        caches.push(cache);
    }
    // Without convolution layers the raw embeddings are combined directly,
    // which reduces the model to bilinear matrix factorization.
    let first = usize::from(!params.conv.is_empty());
    let (user_concat, item_concat) = concat_layers(
        &user_layers[first..],
        &item_layers[first..],
        &params.combine,
    )?;
    let z_user = user_concat.matmul_t(&params.combine);
    let z_item = item_concat.matmul_t(&params.combine);
    Ok(NodeEmbeddings {
        user_layers,
        item_layers,
        z_user,
        z_item,
        caches,
        edge_scale,
        user_concat,
        item_concat,
    })
}
