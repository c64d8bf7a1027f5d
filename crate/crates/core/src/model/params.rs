use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Hyperparams;
use crate::data::BipartiteGraph;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Single-layer GRU with input and hidden width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T> {
    pub w_update: Matrix<T>,
    pub u_update: Matrix<T>,
    pub b_update: Matrix<T>,
    pub w_reset: Matrix<T>,
    pub u_reset: Matrix<T>,
    pub b_reset: Matrix<T>,
    pub w_cand: Matrix<T>,
    pub u_cand: Matrix<T>,
    pub b_cand: Matrix<T>,
}

/// Every learnable tensor. Gradients and Adam moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// |U| × embed_dim
    pub user_embedding: Matrix<T>,
    /// |V| × embed_dim
    pub item_embedding: Matrix<T>,
    /// One embed_dim × 2·embed_dim transform per layer, shared by both sides.
    pub conv: Vec<Matrix<T>>,
    /// final_dim × L·embed_dim layer combiner, shared by both sides.
    pub combine: Matrix<T>,
    /// Bilinear ranking decoder (final_dim × final_dim).
    pub rank_decoder: Matrix<T>,
    /// Bilinear click-through decoder (final_dim × final_dim).
    pub ctr_decoder: Matrix<T>,
    pub gru: GruParams<T>,
    /// |V| × final_dim next-item projection.
    pub seq_output: Matrix<T>,
}

fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-a..=a)))
}

/// Glorot-uniform initialization of every weight matrix, zero GRU biases.
/// Deterministic in `hyper.seed`.
pub fn init_params<T: Scalar>(graph: &BipartiteGraph, hyper: &Hyperparams) -> ModelParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let (de, d) = (hyper.embed_dim, hyper.final_dim);
    let rng = &mut rng;
    let user_embedding = glorot(graph.n_users(), de, rng);
    let item_embedding = glorot(graph.n_items(), de, rng);
    let conv = (0..hyper.n_layers)
        .map(|_| glorot(de, 2 * de, rng))
        .collect();
    let combine = glorot(d, hyper.n_layers.max(1) * de, rng);
    let rank_decoder = glorot(d, d, rng);
    let ctr_decoder = glorot(d, d, rng);
    let gru = GruParams {
        w_update: glorot(d, d, rng),
        u_update: glorot(d, d, rng),
        b_update: Matrix::zeros(1, d),
        w_reset: glorot(d, d, rng),
        u_reset: glorot(d, d, rng),
        b_reset: Matrix::zeros(1, d),
        w_cand: glorot(d, d, rng),
        u_cand: glorot(d, d, rng),
        b_cand: Matrix::zeros(1, d),
    };
    let seq_output = glorot(graph.n_items(), d, rng);
    ModelParams {
        user_embedding,
        item_embedding,
        conv,
        combine,
        rank_decoder,
        ctr_decoder,
        gru,
        seq_output,
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn n_layers(&self) -> usize {
        self.conv.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.user_embedding.cols()
    }

    pub fn final_dim(&self) -> usize {
        self.combine.rows()
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = vec![
            ("user_embedding".to_string(), &self.user_embedding),
            ("item_embedding".to_string(), &self.item_embedding),
        ];
        for (l, w) in self.conv.iter().enumerate() {
            out.push((format!("conv.{l}"), w));
        }
        let g = &self.gru;
        out.extend([
            ("combine".to_string(), &self.combine),
            ("rank_decoder".to_string(), &self.rank_decoder),
            ("ctr_decoder".to_string(), &self.ctr_decoder),
            ("gru.w_update".to_string(), &g.w_update),
            ("gru.u_update".to_string(), &g.u_update),
            ("gru.b_update".to_string(), &g.b_update),
            ("gru.w_reset".to_string(), &g.w_reset),
            ("gru.u_reset".to_string(), &g.u_reset),
            ("gru.b_reset".to_string(), &g.b_reset),
            ("gru.w_cand".to_string(), &g.w_cand),
            ("gru.u_cand".to_string(), &g.u_cand),
            ("gru.b_cand".to_string(), &g.b_cand),
            ("seq_output".to_string(), &self.seq_output),
        ]);
        out
    }

    /// Mutable view in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = vec![&mut self.user_embedding, &mut self.item_embedding];
        out.extend(self.conv.iter_mut());
        let g = &mut self.gru;
        out.extend([
            &mut self.combine,
            &mut self.rank_decoder,
            &mut self.ctr_decoder,
            &mut g.w_update,
            &mut g.u_update,
            &mut g.b_update,
            &mut g.w_reset,
            &mut g.u_reset,
            &mut g.b_reset,
            &mut g.w_cand,
            &mut g.u_cand,
            &mut g.b_cand,
            &mut self.seq_output,
        ]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|m| m.fill(T::zero()));
        z
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(n, _)| n)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let g = &self.gru;
        ModelParams {
            user_embedding: self.user_embedding.cast(),
            item_embedding: self.item_embedding.cast(),
            conv: self.conv.iter().map(Matrix::cast).collect(),
            combine: self.combine.cast(),
            rank_decoder: self.rank_decoder.cast(),
            ctr_decoder: self.ctr_decoder.cast(),
            gru: GruParams {
                w_update: g.w_update.cast(),
                u_update: g.u_update.cast(),
                b_update: g.b_update.cast(),
                w_reset: g.w_reset.cast(),
                u_reset: g.u_reset.cast(),
                b_reset: g.b_reset.cast(),
                w_cand: g.w_cand.cast(),
                u_cand: g.u_cand.cast(),
                b_cand: g.b_cand.cast(),
            },
            seq_output: self.seq_output.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_graph, InteractionRecord};

    fn graph(n_users: usize, n_items: usize) -> BipartiteGraph {
        let recs: Vec<_> = (0..n_users.max(n_items))
            .map(|i| InteractionRecord {
                user_id: format!("u{}", i % n_users),
                item_id: format!("i{}", i % n_items),
                behavior: "1".into(),
                timestamp: 0,
                score: 1.0,
            })
            .collect();
        build_graph(&recs).unwrap()
    }

    #[test]
    fn deterministic_for_seed() {
        let g = graph(3, 4);
        let h = Hyperparams::default();
        assert_eq!(init_params::<f64>(&g, &h), init_params::<f64>(&g, &h));
        let h2 = Hyperparams {
            seed: 1,
            ..h.clone()
        };
        assert_ne!(init_params::<f64>(&g, &h), init_params::<f64>(&g, &h2));
    }

    #[test]
    fn default_shapes() {
        let g = graph(5, 7);
        let p: ModelParams<f64> = init_params(&g, &Hyperparams::default());
        assert_eq!(p.user_embedding.shape(), (5, 64));
        assert_eq!(p.item_embedding.shape(), (7, 64));
        assert_eq!(p.conv.len(), 2);
        assert_eq!(p.conv[0].shape(), (64, 128));
        assert_eq!(p.combine.shape(), (64, 128));
        assert_eq!(p.seq_output.shape(), (7, 64));
        assert_eq!(p.gru.b_cand.shape(), (1, 64));
        assert!(p.gru.b_update.as_slice().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn glorot_bound_on_conv() {
        let g = graph(2, 2);
        let p: ModelParams<f64> = init_params(&g, &Hyperparams::default());
        let bound = (6.0f64 / 192.0).sqrt();
        assert!(p.conv[0].as_slice().iter().all(|x| x.abs() <= bound));
        assert!(p.conv[0].max_abs() > 0.9 * bound);
    }

    #[test]
    fn tensor_views_line_up() {
        let g = graph(2, 3);
        let mut p: ModelParams<f64> = init_params(&g, &Hyperparams::default());
        let shapes: Vec<_> = p.tensors().iter().map(|(_, m)| m.shape()).collect();
        let shapes_mut: Vec<_> = p.tensors_mut().iter().map(|m| m.shape()).collect();
        assert_eq!(shapes, shapes_mut);
        assert_eq!(p.tensors().len(), 2 + 2 + 3 + 9 + 1);
    }
}
