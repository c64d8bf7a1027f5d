//! Batch top-k generation over all users with a fixed-size worker pool.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;

use crate::data::BipartiteGraph;
use crate::error::{Error, Result};
use crate::eval::{rank_order, user_scores};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const CSV_HEADER: &str = "user_id,rank,item_id,score";

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationRow {
    pub user: String,
    /// Item keys with their affinity, best first.
    pub items: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationBatch {
    pub k: usize,
    /// One row per user in ascending dense id order.
    pub rows: Vec<RecommendationRow>,
}

struct Candidate<T>(T, usize);

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Candidate<T> {}

impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Greater means ranked later, so a max-heap keeps the weakest kept item on top.
impl<T: Scalar> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order((self.0, self.1), (other.0, other.1))
    }
}

/// Best `k` unseen items for one user through a bounded heap. `seen` must be
/// sorted ascending.
pub fn select_top_k<T: Scalar>(scores: &[T], seen: &[usize], k: usize) -> Vec<(usize, T)> {
    let mut heap: BinaryHeap<Candidate<T>> = BinaryHeap::with_capacity(k + 1);
    let mut seen_iter = seen.iter().peekable();
    for (v, &s) in scores.iter().enumerate() {
        while seen_iter.next_if(|&&x| x < v).is_some() {}
        if seen_iter.peek() == Some(&&v) {
            continue;
        }
        let cand = Candidate(s, v);
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(mut worst) = heap.peek_mut() {
            if cand < *worst {
                *worst = cand;
            }
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|Candidate(s, v)| (v, s))
        .collect()
}

/// Top-`k` dense item ids and scores for every user, partitioned into
/// `n_workers` contiguous user ranges.
pub fn topk_dense<T: Scalar>(
    z_user: &Matrix<T>,
    z_item: &Matrix<T>,
    q1: &Matrix<T>,
    seen_sets: &[Vec<usize>],
    k: usize,
    n_workers: usize,
) -> Result<Vec<Vec<(usize, T)>>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n_workers == 0 {
        return Err(Error::InvalidArgument(
            "worker count must be at least 1".into(),
        ));
    }
    if seen_sets.len() != z_user.rows() {
        return Err(Error::Shape(format!(
            "{} seen sets for {} users",
            seen_sets.len(),
            z_user.rows()
        )));
    }
    if z_user.cols() != q1.rows() || z_item.cols() != q1.cols() {
        return Err(Error::Shape(
            "embedding widths do not match the decoder".into(),
        ));
    }
    let n_users = z_user.rows();
    let per_worker = n_users.div_ceil(n_workers).max(1);
    let ranges: Vec<(usize, usize)> = (0..n_users)
        .step_by(per_worker)
        .map(|start| (start, (start + per_worker).min(n_users)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n_workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let buffers: Vec<Vec<Vec<(usize, T)>>> = pool.install(|| {
        ranges
            .par_iter()
            .map(|&(start, end)| {
                (start..end)
                    .map(|u| {
                        let scores = user_scores(z_user.row(u), z_item, q1);
                        select_top_k(&scores, &seen_sets[u], k)
                    })
                    .collect()
            })
            .collect()
    });
    Ok(buffers.into_iter().flatten().collect())
}

/// Recommendations for every user of `graph`, skipping items seen in training.
pub fn generate_topk<T: Scalar>(
    graph: &BipartiteGraph,
    z_user: &Matrix<T>,
    z_item: &Matrix<T>,
    q1: &Matrix<T>,
    k: usize,
    n_workers: usize,
) -> Result<RecommendationBatch> {
    if z_user.rows() != graph.n_users() || z_item.rows() != graph.n_items() {
        return Err(Error::Shape(format!(
            "embeddings cover {}x{} nodes, graph has {}x{}",
            z_user.rows(),
            z_item.rows(),
            graph.n_users(),
            graph.n_items()
        )));
    }
    let dense = topk_dense(z_user, z_item, q1, &graph.seen_sets(), k, n_workers)?;
    let rows = dense
        .into_iter()
        .enumerate()
        .map(|(u, items)| RecommendationRow {
            user: graph.users().key(u).to_string(),
            items: items
                .into_iter()
                .map(|(v, s)| (graph.items().key(v).to_string(), s.as_f64()))
                .collect(),
        })
        .collect();
    Ok(RecommendationBatch { k, rows })
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Writes the CSV body to any sink.
pub fn write_csv<W: Write>(batch: &RecommendationBatch, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in &batch.rows {
        for (rank, (item, score)) in row.items.iter().enumerate() {
            writeln!(out, "{},{},{},{:.6}", row.user, rank + 1, item, score)?;
        }
    }
    out.flush()
}

/// Writes `batch` to `path`, gzip-compressed when the name ends in `.gz`.
pub fn write_recommendations(batch: &RecommendationBatch, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gz(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        write_csv(batch, &mut enc).and_then(|_| enc.finish().map(drop))
    } else {
        write_csv(batch, BufWriter::new(file))
    };
    res.map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`write_recommendations`]. Users with no
/// recommended items do not appear in the file and so are absent here.
pub fn read_recommendations(path: &Path, k: usize) -> Result<RecommendationBatch> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let mut rows: Vec<RecommendationRow> = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let parse_err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        if i == 0 {
            if line != CSV_HEADER {
                return Err(parse_err(format!("expected header `{CSV_HEADER}`")));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [user, rank, item, score] = fields[..] else {
            return Err(parse_err(format!(
                "expected 4 fields, got {}",
                fields.len()
            )));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| parse_err(format!("bad rank `{rank}`")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| parse_err(format!("bad score `{score}`")))?;
        match rows.last_mut() {
            Some(row) if row.user == user && rank == row.items.len() + 1 => {
                row.items.push((item.to_string(), score))
            }
            _ if rank == 1 => rows.push(RecommendationRow {
                user: user.to_string(),
                items: vec![(item.to_string(), score)],
            }),
            _ => return Err(parse_err(format!("rank {rank} out of sequence"))),
        }
    }
    Ok(RecommendationBatch { k, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::rank_items;

    fn toy() -> (Matrix<f64>, Matrix<f64>, Matrix<f64>) {
        let zu = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let zv = Matrix::from_rows(&[
            vec![0.5, 0.1],
            vec![0.2, 0.9],
            vec![0.5, 0.1],
            vec![-1.0, 0.0],
        ])
        .unwrap();
        (zu, zv, Matrix::identity(2))
    }

    #[test]
    fn ties_resolve_by_item_id() {
        let top = select_top_k(&[1.0, 2.0, 2.0, 0.5], &[], 3);
        assert_eq!(top, vec![(1, 2.0), (2, 2.0), (0, 1.0)]);
    }

    #[test]
    fn seen_items_are_skipped() {
        let top = select_top_k(&[5.0, 4.0, 3.0, 2.0], &[0, 2], 4);
        assert_eq!(top, vec![(1, 4.0), (3, 2.0)]);
    }

    #[test]
    fn exhausted_catalog_gives_empty_row() {
        assert!(select_top_k(&[1.0, 2.0], &[0, 1], 5).is_empty());
    }

    #[test]
    fn matches_full_sort() {
        let (zu, zv, q) = toy();
        let seen = vec![vec![1], vec![], vec![0, 3]];
        let dense = topk_dense(&zu, &zv, &q, &seen, 2, 2).unwrap();
        for (u, row) in dense.iter().enumerate() {
            let ids: Vec<usize> = row.iter().map(|&(v, _)| v).collect();
            assert_eq!(ids, rank_items(u, &zu, &zv, &q, &seen[u], 2));
        }
    }

    #[test]
    fn zero_k_or_workers_rejected() {
        let (zu, zv, q) = toy();
        let seen = vec![vec![]; 3];
        assert!(topk_dense(&zu, &zv, &q, &seen, 0, 1).is_err());
        assert!(topk_dense(&zu, &zv, &q, &seen, 1, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let batch = RecommendationBatch {
            k: 2,
            rows: vec![RecommendationRow {
                user: "u1".into(),
                items: vec![("a".into(), 0.5), ("b".into(), -0.25)],
            }],
        };
        let mut buf = Vec::new();
        write_csv(&batch, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "user_id,rank,item_id,score\nu1,1,a,0.500000\nu1,2,b,-0.250000\n"
        );
        let mut empty = Vec::new();
        write_csv(&RecommendationBatch { k: 3, rows: vec![] }, &mut empty).unwrap();
        assert_eq!(empty, b"user_id,rank,item_id,score\n");
    }
}
