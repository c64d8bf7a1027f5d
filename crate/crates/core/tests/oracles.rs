mod common;

use std::collections::BTreeSet;

use bgcf::data::{build_graph_indexed, BipartiteGraph, InteractionRecord};
use bgcf::eval::{evaluate_embeddings, rank_items, MetricsReport};
use bgcf::matrix::Matrix;
use bgcf::topk::{
    generate_topk, read_recommendations, topk_dense, write_recommendations, RecommendationBatch,
};
use common::integer_matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(u: usize, v: usize) -> InteractionRecord {
    InteractionRecord {
        user_id: format!("u{u}"),
        item_id: format!("i{v}"),
        behavior: "1".into(),
        timestamp: 0,
        score: 1.0,
    }
}

struct Instance {
    graph: BipartiteGraph,
    test: Vec<InteractionRecord>,
    zu: Matrix<f64>,
    zv: Matrix<f64>,
    q1: Matrix<f64>,
}

fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_users = rng.gen_range(1..12);
    let n_items = rng.gen_range(1..15);
    let d = rng.gen_range(1..4);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for u in 0..n_users {
        for v in 0..n_items {
            match rng.gen_range(0..10) {
                0..=2 => train.push(record(u, v)),
                3 | 4 => test.push(record(u, v)),
                _ => {}
            }
        }
    }
    if train.is_empty() {
        train.push(record(0, 0));
    }
    let graph = build_graph_indexed(&[&train, &test], &train).unwrap();
    Instance {
        zu: integer_matrix(graph.n_users(), d, &mut rng),
        zv: integer_matrix(graph.n_items(), d, &mut rng),
        q1: integer_matrix(d, d, &mut rng),
        graph,
        test,
    }
}

/// Metrics straight from their definitions with an exhaustive ranking.
fn brute_force(inst: &Instance, k: usize) -> Option<MetricsReport> {
    let g = &inst.graph;
    let (mut recall, mut urecall, mut ndcg, mut n) = (0.0, 0.0, 0.0, 0usize);
    for u in 0..g.n_users() {
        let positives: BTreeSet<usize> = inst
            .test
            .iter()
            .filter(|r| g.users().id(&r.user_id) == Some(u))
            .map(|r| g.items().id(&r.item_id).unwrap())
            .collect();
        let seen: BTreeSet<usize> = g.user_neighbors(u).map(|(v, _)| v).collect();
        if positives.is_empty() || seen.is_empty() {
            continue;
        }
        let mut scored: Vec<(f64, usize)> = (0..g.n_items())
            .filter(|v| !seen.contains(v))
            .map(|v| {
                let mut s = 0.0;
                for a in 0..inst.q1.rows() {
                    for b in 0..inst.q1.cols() {
                        s += inst.zu.get(u, a) * inst.q1.get(a, b) * inst.zv.get(v, b);
                    }
                }
                (s, v)
            })
            .collect();
        scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        let top: Vec<usize> = scored.iter().take(k).map(|&(_, v)| v).collect();
        let hits: Vec<usize> = (0..top.len())
            .filter(|&i| positives.contains(&top[i]))
            .collect();
        recall += hits.len() as f64 / positives.len() as f64;
        urecall += if hits.is_empty() { 0.0 } else { 1.0 };
        let dcg: f64 = hits.iter().map(|&i| 1.0 / ((i + 2) as f64).log2()).sum();
        let idcg: f64 = (0..k.min(positives.len()))
            .map(|i| 1.0 / ((i + 2) as f64).log2())
            .sum();
        ndcg += dcg / idcg;
        n += 1;
    }
    (n > 0).then(|| MetricsReport {
        k,
        recall: recall / n as f64,
        urecall: urecall / n as f64,
        ndcg: ndcg / n as f64,
        n_users_evaluated: n,
    })
}

#[test]
fn metrics_match_brute_force_exactly() {
    let mut compared = 0;
    let mut seed = 0;
    while compared < 100 {
        let inst = random_instance(seed);
        seed += 1;
        if brute_force(&inst, 1).is_none() {
            continue;
        }
        for k in [1, 3, 10] {
            let expected = brute_force(&inst, k).unwrap();
            let got =
                evaluate_embeddings(&inst.graph, &inst.zu, &inst.zv, &inst.q1, &inst.test, &[k])
                    .unwrap();
            assert_eq!(got, vec![expected], "seed {seed} k {k}");
        }
        compared += 1;
    }
}

#[test]
fn no_evaluable_users_is_an_error() {
    let train = vec![record(0, 0)];
    let test = vec![record(1, 0)];
    let graph = build_graph_indexed(&[&train, &test], &train).unwrap();
    let zu = Matrix::from_fn(graph.n_users(), 1, |_, _| 1.0);
    let zv = Matrix::from_fn(graph.n_items(), 1, |_, _| 1.0);
    let err = evaluate_embeddings(&graph, &zu, &zv, &Matrix::identity(1), &test, &[5]);
    assert!(matches!(err, Err(bgcf::Error::NoEvaluableUsers)));
}

#[test]
fn several_cutoffs_match_single_calls() {
    let inst = random_instance(1234);
    let all = evaluate_embeddings(
        &inst.graph,
        &inst.zu,
        &inst.zv,
        &inst.q1,
        &inst.test,
        &[2, 5],
    )
    .unwrap();
    for r in &all {
        let one = evaluate_embeddings(
            &inst.graph,
            &inst.zu,
            &inst.zv,
            &inst.q1,
            &inst.test,
            &[r.k],
        )
        .unwrap();
        assert_eq!(one, vec![*r]);
    }
}

#[test]
fn topk_rows_equal_rank_items() {
    for seed in 0..50 {
        let inst = random_instance(seed);
        let seen = inst.graph.seen_sets();
        for k in [1, 4, 20] {
            let dense = topk_dense(&inst.zu, &inst.zv, &inst.q1, &seen, k, 3).unwrap();
            for (u, row) in dense.iter().enumerate() {
                let ids: Vec<usize> = row.iter().map(|&(v, _)| v).collect();
                assert_eq!(
                    ids,
                    rank_items(u, &inst.zu, &inst.zv, &inst.q1, &seen[u], k)
                );
                assert!(row.windows(2).all(|w| w[0].1 >= w[1].1));
            }
        }
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let inst = random_instance(77);
    let one = generate_topk(&inst.graph, &inst.zu, &inst.zv, &inst.q1, 5, 1).unwrap();
    for workers in [2, 3, 8, 64] {
        let many = generate_topk(&inst.graph, &inst.zu, &inst.zv, &inst.q1, 5, workers).unwrap();
        assert_eq!(many, one);
    }
}

fn nonempty(batch: &RecommendationBatch) -> Vec<bgcf::topk::RecommendationRow> {
    batch
        .rows
        .iter()
        .filter(|r| !r.items.is_empty())
        .cloned()
        .collect()
}

#[test]
fn csv_round_trip_plain_and_gzip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inst = random_instance(9);
    let zu = Matrix::from_fn(inst.zu.rows(), 3, |_, _| rng.gen_range(-1.0..1.0));
    let zv = Matrix::from_fn(inst.zv.rows(), 3, |_, _| rng.gen_range(-1.0..1.0));
    let q1 = Matrix::identity(3);
    let batch = generate_topk(&inst.graph, &zu, &zv, &q1, 4, 2).unwrap();
    for name in ["recs.csv", "recs.csv.gz"] {
        let path = dir.path().join(name);
        write_recommendations(&batch, &path).unwrap();
        let back = read_recommendations(&path, 4).unwrap();
        let want = nonempty(&batch);
        assert_eq!(back.rows.len(), want.len());
        for (a, b) in back.rows.iter().zip(&want) {
            assert_eq!(a.user, b.user);
            assert_eq!(a.items.len(), b.items.len());
            for ((ia, sa), (ib, sb)) in a.items.iter().zip(&b.items) {
                assert_eq!(ia, ib);
                assert!((sa - sb).abs() <= 5e-7);
            }
        }
    }
    let raw = std::fs::read(dir.path().join("recs.csv.gz")).unwrap();
    assert_eq!(&raw[..2], &[0x1f, 0x8b]);
}

#[test]
fn unwritable_sink_names_the_path() {
    let inst = random_instance(3);
    let batch = generate_topk(&inst.graph, &inst.zu, &inst.zv, &inst.q1, 2, 1).unwrap();
    let path = std::path::Path::new("/nonexistent-dir/recs.csv");
    let err = write_recommendations(&batch, path).unwrap_err();
    assert_eq!(err.category(), "io");
    assert!(err.to_string().contains("/nonexistent-dir/recs.csv"));
}
