//! Interaction ingestion, the weighted user-item graph, dataset splitting
//! and per-user interaction sequences.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps behavior labels to their a-priori preference score φ(r).
///
/// In `numeric` mode a label is its own score (MovieLens rating strings such
/// as `"3"` or `"4.5"`); otherwise only the listed labels are accepted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BehaviorScoreMap {
    entries: BTreeMap<String, f64>,
    numeric: bool,
}

impl BehaviorScoreMap {
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (label, score) in entries {
            let label = label.into();
            if !(score.is_finite() && score > 0.0) {
                return Err(Error::Config(format!(
                    "behavior `{label}` has non-positive score {score}"
                )));
            }
            map.insert(label, score);
        }
        Ok(Self {
            entries: map,
            numeric: false,
        })
    }

    /// Identity map over numeric labels: φ("4.5") = 4.5.
    pub fn numeric() -> Self {
        Self {
            entries: BTreeMap::new(),
            numeric: true,
        }
    }

    /// Parses a flat `label = score` document.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let table: BTreeMap<String, f64> =
            toml::from_str(text).map_err(|e| Error::Config(format!("behavior scores: {e}")))?;
        Self::new(table)
    }

    pub fn is_numeric(&self) -> bool {
        self.numeric
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.entries
    }

    pub fn score(&self, label: &str) -> Result<f64> {
        if let Some(&s) = self.entries.get(label) {
            return Ok(s);
        }
        if self.numeric {
            if let Ok(v) = label.trim().parse::<f64>() {
                if v.is_finite() && v > 0.0 {
                    return Ok(v);
                }
            }
        }
        Err(Error::UnknownBehavior(label.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub behavior: String,
    pub timestamp: u64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`, no header.
    MovielensTab,
    /// Header `user_id,item_id,behavior,timestamp`.
    GenericCsv,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens_tab" => Ok(Self::MovielensTab),
            "generic_csv" => Ok(Self::GenericCsv),
            other => Err(Error::Config(format!("unknown input format `{other}`"))),
        }
    }
}

const CSV_HEADER: [&str; 4] = ["user_id", "item_id", "behavior", "timestamp"];

pub fn parse_interactions<R: BufRead>(
    source: R,
    format: InputFormat,
    score_map: &BehaviorScoreMap,
) -> Result<Vec<InteractionRecord>> {
    let mut records = Vec::new();
    let mut header_seen = false;
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            InputFormat::MovielensTab => line.split('\t').collect(),
            InputFormat::GenericCsv => line.split(',').map(str::trim).collect(),
        };
        if format == InputFormat::GenericCsv && !header_seen {
            if fields != CSV_HEADER {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected header `{}`", CSV_HEADER.join(",")),
                });
            }
            header_seen = true;
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        if fields[..3].iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                line: line_no,
                message: "empty field".into(),
            });
        }
        let timestamp = fields[3].trim().parse::<u64>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad timestamp `{}`", fields[3]),
        })?;
        let score = score_map.score(fields[2])?;
        records.push(InteractionRecord {
            user_id: fields[0].to_string(),
            item_id: fields[1].to_string(),
            behavior: fields[2].to_string(),
            timestamp,
            score,
        });
    }
    Ok(records)
}

/// Bidirectional map between external keys and dense ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyIndex {
    keys: Vec<String>,
    ids: HashMap<String, usize>,
}

impl KeyIndex {
    pub fn from_keys(keys: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if ids.insert(k.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate key `{k}`")));
            }
        }
        Ok(Self { keys, ids })
    }

    pub fn insert(&mut self, key: &str) -> usize {
        if let Some(&id) = self.ids.get(key) {
            return id;
        }
        let id = self.keys.len();
        self.keys.push(key.to_string());
        self.ids.insert(key.to_string(), id);
        id
    }

    pub fn id(&self, key: &str) -> Option<usize> {
        self.ids.get(key).copied()
    }

    pub fn key(&self, id: usize) -> &str {
        &self.keys[id]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub user: usize,
    pub item: usize,
    pub weight: f64,
}

/// Deduplicated, weighted user-item adjacency.
///
/// Edges are stored once, sorted by `(user, item)`. The per-user view is a
/// contiguous range of that list; the per-item view is a list of edge ids
/// sorted by user.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    users: KeyIndex,
    items: KeyIndex,
    edges: Vec<Edge>,
    user_offsets: Vec<usize>,
    item_offsets: Vec<usize>,
    item_edge_ids: Vec<usize>,
}

impl BipartiteGraph {
    /// Assembles a graph from index maps and an edge list. Duplicate pairs
    /// keep the maximum weight.
    pub fn from_parts(users: KeyIndex, items: KeyIndex, edges: Vec<Edge>) -> Result<Self> {
        let (n_users, n_items) = (users.len(), items.len());
        let mut best: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for e in edges {
            if e.user >= n_users || e.item >= n_items {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) outside a {n_users}x{n_items} graph",
                    e.user, e.item
                )));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) has non-positive weight {}",
                    e.user, e.item, e.weight
                )));
            }
            best.entry((e.user, e.item))
                .and_modify(|w| *w = w.max(e.weight))
                .or_insert(e.weight);
        }
        let edges: Vec<Edge> = best
            .into_iter()
            .map(|((user, item), weight)| Edge { user, item, weight })
            .collect();

        let mut user_offsets = vec![0usize; n_users + 1];
        let mut item_counts = vec![0usize; n_items + 1];
        for e in &edges {
            user_offsets[e.user + 1] += 1;
            item_counts[e.item + 1] += 1;
        }
        for i in 0..n_users {
            user_offsets[i + 1] += user_offsets[i];
        }
        for i in 0..n_items {
            item_counts[i + 1] += item_counts[i];
        }
        let item_offsets = item_counts.clone();
        let mut cursor = item_counts;
        let mut item_edge_ids = vec![0usize; edges.len()];
        for (id, e) in edges.iter().enumerate() {
            item_edge_ids[cursor[e.item]] = id;
            cursor[e.item] += 1;
        }
        Ok(Self {
            users,
            items,
            edges,
            user_offsets,
            item_offsets,
            item_edge_ids,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn users(&self) -> &KeyIndex {
        &self.users
    }

    pub fn items(&self) -> &KeyIndex {
        &self.items
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn user_edge_range(&self, u: usize) -> Range<usize> {
        self.user_offsets[u]..self.user_offsets[u + 1]
    }

    /// Edges of user `u`, sorted by item id.
    pub fn user_edges(&self, u: usize) -> &[Edge] {
        &self.edges[self.user_edge_range(u)]
    }

    /// Ids (into [`edges`](Self::edges)) of the edges touching item `v`,
    /// sorted by user id.
    pub fn item_edge_ids(&self, v: usize) -> &[usize] {
        &self.item_edge_ids[self.item_offsets[v]..self.item_offsets[v + 1]]
    }

    pub fn user_neighbors(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.user_edges(u).iter().map(|e| (e.item, e.weight))
    }

    pub fn item_neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.item_edge_ids(v).iter().map(|&id| {
            let e = &self.edges[id];
            (e.user, e.weight)
        })
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_offsets[u + 1] - self.user_offsets[u]
    }

    pub fn item_degree(&self, v: usize) -> usize {
        self.item_offsets[v + 1] - self.item_offsets[v]
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        (0..self.n_users()).map(|u| self.user_degree(u)).collect()
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        (0..self.n_items()).map(|v| self.item_degree(v)).collect()
    }

    pub fn edge_weight(&self, u: usize, v: usize) -> Option<f64> {
        let es = self.user_edges(u);
        es.binary_search_by_key(&v, |e| e.item)
            .ok()
            .map(|i| es[i].weight)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_weight(u, v).is_some()
    }

    /// Same topology with every weight forced to 1.
    pub fn with_unit_weights(&self) -> Self {
        let mut g = self.clone();
        g.edges.iter_mut().for_each(|e| e.weight = 1.0);
        g
    }

    /// Items each user interacted with, as sorted id lists.
    pub fn seen_sets(&self) -> Vec<Vec<usize>> {
        (0..self.n_users())
            .map(|u| self.user_edges(u).iter().map(|e| e.item).collect())
            .collect()
    }
}

/// Builds a graph whose index and edges both come from `records`.
pub fn build_graph(records: &[InteractionRecord]) -> Result<BipartiteGraph> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no interaction records"));
    }
    build_graph_indexed(&[records], records)
}

/// Indexes every record of `index_sources` (in order) but creates edges only
/// for `edge_records`. Keys in `edge_records` are indexed too.
pub fn build_graph_indexed(
    index_sources: &[&[InteractionRecord]],
    edge_records: &[InteractionRecord],
) -> Result<BipartiteGraph> {
    let mut users = KeyIndex::default();
    let mut items = KeyIndex::default();
    for r in index_sources.iter().flat_map(|s| s.iter()) {
        users.insert(&r.user_id);
        items.insert(&r.item_id);
    }
    let edges = edge_records
        .iter()
        .map(|r| Edge {
            user: users.insert(&r.user_id),
            item: items.insert(&r.item_id),
            weight: r.score,
        })
        .collect();
    BipartiteGraph::from_parts(users, items, edges)
}

/// Training graph for a split: ids cover every split, edges come from the
/// train part only.
pub fn build_split_graph(split: &DatasetSplit) -> Result<BipartiteGraph> {
    if split.train.is_empty() {
        return Err(Error::EmptyInput("train split"));
    }
    build_graph_indexed(
        &[&split.train, &split.validation, &split.test],
        &split.train,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<InteractionRecord>,
    pub validation: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    pub seed: u64,
}

/// Random partition by record. Each part keeps the input order.
pub fn split_dataset(
    records: &[InteractionRecord],
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {ratios:?}"
        )));
    }
    if records.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 records to split, got {}",
            records.len()
        )));
    }
    let n = records.len();
    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.into_iter()
            .map(|i| records[i].clone())
            .collect::<Vec<_>>()
    };
    Ok(DatasetSplit {
        train: take(&order[..n_train]),
        validation: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSequence {
    pub user: usize,
    pub user_id: String,
    /// Dense item ids, oldest first.
    pub items: Vec<usize>,
}

/// One time-ordered sequence per user with at least two interactions,
/// truncated to the `max_seq_len` most recent items. Records whose keys are
/// missing from `graph`'s index are ignored.
pub fn build_sequences(
    records: &[InteractionRecord],
    graph: &BipartiteGraph,
    max_seq_len: usize,
) -> Vec<InteractionSequence> {
    let max_seq_len = max_seq_len.max(2);
    let mut per_user: Vec<Vec<(u64, usize)>> = vec![Vec::new(); graph.n_users()];
    for r in records {
        if let (Some(u), Some(v)) = (graph.users().id(&r.user_id), graph.items().id(&r.item_id)) {
            per_user[u].push((r.timestamp, v));
        }
    }
    per_user
        .into_iter()
        .enumerate()
        .filter(|(_, events)| events.len() >= 2)
        .map(|(u, mut events)| {
            // stable: equal timestamps keep input order
            events.sort_by_key(|&(t, _)| t);
            let skip = events.len().saturating_sub(max_seq_len);
            InteractionSequence {
                user: u,
                user_id: graph.users().key(u).to_string(),
                items: events[skip..].iter().map(|&(_, v)| v).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, score: f64, t: u64) -> InteractionRecord {
        InteractionRecord {
            user_id: u.into(),
            item_id: i.into(),
            behavior: score.to_string(),
            timestamp: t,
            score,
        }
    }

    #[test]
    fn parses_movielens_line() {
        let recs = parse_interactions(
            "196\t242\t3\t881250949\n".as_bytes(),
            InputFormat::MovielensTab,
            &BehaviorScoreMap::numeric(),
        )
        .unwrap();
        assert_eq!(
            recs,
            vec![InteractionRecord {
                user_id: "196".into(),
                item_id: "242".into(),
                behavior: "3".into(),
                timestamp: 881250949,
                score: 3.0,
            }]
        );
    }

    #[test]
    fn empty_stream_is_empty() {
        for fmt in [InputFormat::MovielensTab, InputFormat::GenericCsv] {
            let recs =
                parse_interactions("".as_bytes(), fmt, &BehaviorScoreMap::numeric()).unwrap();
            assert!(recs.is_empty());
        }
    }

    #[test]
    fn csv_behavior_lookup() {
        let map = BehaviorScoreMap::new([("share", 4.0), ("like", 4.5)]).unwrap();
        let text = "user_id,item_id,behavior,timestamp\nu1,v9,share,17\n";
        let recs = parse_interactions(text.as_bytes(), InputFormat::GenericCsv, &map).unwrap();
        assert_eq!(recs[0].score, 4.0);
        assert_eq!(recs[0].timestamp, 17);
    }

    #[test]
    fn unknown_behavior_is_named() {
        let map = BehaviorScoreMap::new([("share", 4.0)]).unwrap();
        let text = "user_id,item_id,behavior,timestamp\nu1,v9,download,17\n";
        let err = parse_interactions(text.as_bytes(), InputFormat::GenericCsv, &map).unwrap_err();
        assert!(matches!(err, Error::UnknownBehavior(ref l) if l == "download"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "1\t2\t3\t4\n1\t2\t3\n";
        let err = parse_interactions(
            text.as_bytes(),
            InputFormat::MovielensTab,
            &BehaviorScoreMap::numeric(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let text = "1\t2\t3\t-4\n";
        let err = parse_interactions(
            text.as_bytes(),
            InputFormat::MovielensTab,
            &BehaviorScoreMap::numeric(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn csv_requires_header() {
        let err = parse_interactions(
            "u1,v1,3,0\n".as_bytes(),
            InputFormat::GenericCsv,
            &BehaviorScoreMap::numeric(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn score_map_rejects_non_positive() {
        assert!(BehaviorScoreMap::new([("x", 0.0)]).is_err());
        assert!(BehaviorScoreMap::from_kv_str("click = -1.0").is_err());
        let m = BehaviorScoreMap::from_kv_str("click = 0.5\nshare = 4.0").unwrap();
        assert_eq!(m.score("share").unwrap(), 4.0);
        assert!(BehaviorScoreMap::numeric().score("0").is_err());
    }

    #[test]
    fn single_edge_graph() {
        let g = build_graph(&[rec("u1", "i1", 2.5, 0)]).unwrap();
        assert_eq!((g.n_users(), g.n_items(), g.n_edges()), (1, 1, 1));
        assert_eq!(g.edges()[0].weight, 2.5);
        assert_eq!(g.user_degrees(), vec![1]);
        assert_eq!(g.item_degrees(), vec![1]);
    }

    #[test]
    fn duplicate_pairs_keep_max_weight() {
        let g = build_graph(&[rec("u1", "i1", 1.0, 0), rec("u1", "i1", 4.0, 1)]).unwrap();
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.edge_weight(0, 0), Some(4.0));
    }

    #[test]
    fn degree_tables() {
        let g = build_graph(&[
            rec("u1", "i1", 1.0, 0),
            rec("u1", "i2", 1.0, 0),
            rec("u2", "i1", 1.0, 0),
        ])
        .unwrap();
        assert_eq!(g.user_degrees(), vec![2, 1]);
        assert_eq!(g.item_degrees(), vec![2, 1]);
        assert_eq!(
            g.item_neighbors(0).map(|(u, _)| u).collect::<Vec<_>>(),
            vec![0, 1]
        );
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(matches!(build_graph(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let recs: Vec<_> = (0..10).map(|i| rec("u", &i.to_string(), 1.0, i)).collect();
        let a = split_dataset(&recs, [0.7, 0.1, 0.2], 7).unwrap();
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (7, 1, 2));
        let b = split_dataset(&recs, [0.7, 0.1, 0.2], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_depends_on_seed() {
        let recs: Vec<_> = (0..100).map(|i| rec("u", &i.to_string(), 1.0, i)).collect();
        let a = split_dataset(&recs, [0.7, 0.1, 0.2], 1).unwrap();
        let b = split_dataset(&recs, [0.7, 0.1, 0.2], 2).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn split_errors() {
        let recs: Vec<_> = (0..2).map(|i| rec("u", &i.to_string(), 1.0, i)).collect();
        assert!(split_dataset(&recs, [0.7, 0.1, 0.2], 0).is_err());
        let recs: Vec<_> = (0..5).map(|i| rec("u", &i.to_string(), 1.0, i)).collect();
        assert!(split_dataset(&recs, [0.7, 0.1, 0.1], 0).is_err());
        assert!(split_dataset(&recs, [1.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn sequences_sorted_by_time() {
        let recs = vec![
            rec("u", "a", 1.0, 5),
            rec("u", "b", 1.0, 1),
            rec("u", "c", 1.0, 3),
            rec("w", "a", 1.0, 2),
        ];
        let g = build_graph(&recs).unwrap();
        let seqs = build_sequences(&recs, &g, 50);
        assert_eq!(seqs.len(), 1, "single-interaction user emits nothing");
        let names: Vec<&str> = seqs[0].items.iter().map(|&v| g.items().key(v)).collect();
        assert_eq!(names, ["b", "c", "a"]);
    }

    #[test]
    fn sequences_keep_most_recent() {
        let recs: Vec<_> = (0..7u64)
            .rev()
            .map(|t| rec("u", &format!("i{t}"), 1.0, t))
            .collect();
        let g = build_graph(&recs).unwrap();
        let seqs = build_sequences(&recs, &g, 5);
        let names: Vec<&str> = seqs[0].items.iter().map(|&v| g.items().key(v)).collect();
        assert_eq!(names, ["i2", "i3", "i4", "i5", "i6"]);
    }

    #[test]
    fn sequence_ties_keep_input_order() {
        let recs = vec![
            rec("u", "x", 1.0, 1),
            rec("u", "y", 1.0, 1),
            rec("u", "z", 1.0, 0),
        ];
        let g = build_graph(&recs).unwrap();
        let seqs = build_sequences(&recs, &g, 10);
        let names: Vec<&str> = seqs[0].items.iter().map(|&v| g.items().key(v)).collect();
        assert_eq!(names, ["z", "x", "y"]);
    }

    #[test]
    fn split_graph_indexes_all_parts() {
        let recs: Vec<_> = (0..10)
            .map(|i| rec(&format!("u{}", i % 3), &format!("i{i}"), 1.0, i))
            .collect();
        let split = split_dataset(&recs, [0.7, 0.1, 0.2], 3).unwrap();
        let g = build_split_graph(&split).unwrap();
        assert_eq!(g.n_items(), 10);
        assert_eq!(g.n_edges(), 7);
    }
}
