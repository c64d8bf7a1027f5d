use rand::Rng;

use super::TrainQuadruple;
use crate::data::BipartiteGraph;
use crate::error::{Error, Result};

/// Draws `n` items uniformly (with replacement) among those `u` has no
/// training edge to, by rejection.
pub fn sample_negatives<R: Rng + ?Sized>(
    graph: &BipartiteGraph,
    u: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n_items = graph.n_items();
    if graph.user_degree(u) >= n_items {
        return Err(Error::NoNegatives(u));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = rng.gen_range(0..n_items);
        if !graph.has_edge(u, w) {
            out.push(w);
        }
    }
    Ok(out)
}

/// `n_negatives` quadruples per training edge, in edge order.
pub fn build_quadruples<R: Rng + ?Sized>(
    graph: &BipartiteGraph,
    n_negatives: usize,
    rng: &mut R,
) -> Result<Vec<TrainQuadruple>> {
    let mut quads = Vec::with_capacity(graph.n_edges() * n_negatives);
    for e in graph.edges() {
        for w in sample_negatives(graph, e.user, n_negatives, rng)? {
            quads.push(TrainQuadruple {
                u: e.user,
                v: e.item,
                phi: e.weight,
                w,
            });
        }
    }
    Ok(quads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Edge, KeyIndex};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn keys(p: &str, n: usize) -> KeyIndex {
        KeyIndex::from_keys((0..n).map(|i| format!("{p}{i}")).collect()).unwrap()
    }

    fn graph(n_items: usize, items: &[usize]) -> BipartiteGraph {
        let edges = items
            .iter()
            .map(|&item| Edge {
                user: 0,
                item,
                weight: 1.0,
            })
            .collect();
        BipartiteGraph::from_parts(keys("u", 1), keys("i", n_items), edges).unwrap()
    }

    #[test]
    fn single_candidate() {
        let g = graph(2, &[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_negatives(&g, 0, 5, &mut rng).unwrap(), vec![1; 5]);
    }

    #[test]
    fn exhausted_user_errors() {
        let g = graph(2, &[0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_negatives(&g, 0, 1, &mut rng),
            Err(Error::NoNegatives(0))
        ));
    }

    #[test]
    fn never_returns_positives() {
        let g = graph(6, &[1, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let w = sample_negatives(&g, 0, 1, &mut rng).unwrap()[0];
            assert!(!g.has_edge(0, w));
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn uniform_over_candidates() {
        // 5 candidate items (ids 0, 2, 4, 6, 7); chi-square with 4 dof.
        let g = graph(8, &[1, 3, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let mut counts = [0usize; 8];
        for w in sample_negatives(&g, 0, draws, &mut rng).unwrap() {
            counts[w] += 1;
        }
        let expected = draws as f64 / 5.0;
        let chi2: f64 = [0, 2, 4, 6, 7]
            .iter()
            .map(|&i| (counts[i] as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9th percentile of chi-square(4) is 18.47
        assert!(chi2 < 18.47, "chi2 = {chi2}");
        for i in 0..8 {
            let z = (counts[i] as f64 - expected) / (expected * 0.8).sqrt();
            if g.has_edge(0, i) {
                assert_eq!(counts[i], 0);
            } else {
                assert!(z.abs() < 3.0, "item {i}: z = {z}");
            }
        }
    }

    #[test]
    fn quadruples_cover_every_edge() {
        let g = graph(5, &[0, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = build_quadruples(&g, 3, &mut rng).unwrap();
        assert_eq!(q.len(), 6);
        assert!(q[..3].iter().all(|x| x.v == 0) && q[3..].iter().all(|x| x.v == 2));
        assert!(q.iter().all(|x| !g.has_edge(x.u, x.w) && x.w != x.v));
    }
}
