#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bgcf::config::ExperimentConfig;
use bgcf::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tab-separated ratings with block structure: users in group `g` mostly
/// rate items in group `g`, and rate them higher.
pub fn synthetic_ratings(n_users: usize, n_items: usize, groups: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for u in 0..n_users {
        for v in 0..n_items {
            let same = u % groups == v % groups;
            let p = if same { 0.45 } else { 0.04 };
            if rng.gen_bool(p) {
                let rating = if same {
                    rng.gen_range(3..=5)
                } else {
                    rng.gen_range(1..=3)
                };
                let t = 880_000_000 + rng.gen_range(0..1_000_000u64);
                let _ = writeln!(out, "{}\t{}\t{rating}\t{t}", u + 1, v + 1);
            }
        }
    }
    out
}

/// Writes a small synthetic dataset and a fast-training config under `dir`.
pub fn small_experiment(dir: &Path) -> (ExperimentConfig, PathBuf) {
    let data = dir.join("ratings.tsv");
    std::fs::write(&data, synthetic_ratings(40, 30, 3, 7)).unwrap();
    let mut cfg = ExperimentConfig::new(&data, dir.join("out"));
    cfg.model.embed_dim = 8;
    cfg.model.final_dim = 6;
    cfg.model.n_negatives = 2;
    cfg.model.epochs = 6;
    cfg.model.max_seq_len = 5;
    cfg.split.seed = 3;
    cfg.eval.k = vec![5, 10];
    (cfg, data)
}

/// Small integers keep every score exact, so ties are frequent and
/// summation order cannot change a ranking.
pub fn integer_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-3i32..=3) as f64)
}
