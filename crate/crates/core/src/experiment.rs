//! End-to-end commands: train, evaluate, recommend, ablate, gradcheck and the
//! loss-weight sweep. Each writes its artifacts under the configured output
//! directory and returns what it wrote.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{
    build_split_graph, parse_interactions, split_dataset, BipartiteGraph, DatasetSplit,
    InteractionRecord,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_embeddings, MetricsReport};
use crate::model::{forward, ModelParams};
use crate::topk::{generate_topk, write_recommendations, RecommendationBatch};
use crate::training::gradcheck::{check_gradients, random_instance, GradcheckReport, InstanceSpec};
use crate::training::{fit, EpochRecord};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const HISTORY_FILE: &str = "loss_history.txt";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const ABLATION_FILE: &str = "ablation.txt";

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn load_records(cfg: &ExperimentConfig) -> Result<Vec<InteractionRecord>> {
    let path = &cfg.dataset.path;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(BufReader::new(file), cfg.dataset.format, &cfg.score_map()?)
}

/// The split and its training graph, with behavior weights flattened to 1
/// when the config disables them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: DatasetSplit,
    pub graph: BipartiteGraph,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let records = load_records(cfg)?;
    let split = split_dataset(&records, cfg.split.ratios, cfg.split.seed)?;
    let mut graph = build_split_graph(&split)?;
    if cfg.ablation.disable_behavior_weighting {
        graph = graph.with_unit_weights();
    }
    Ok(Prepared { split, graph })
}

/// Trains on a prepared split and returns the best-validation checkpoint
/// with the per-epoch history.
pub fn train_prepared(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Checkpoint<f64>, Vec<EpochRecord>)> {
    let hyper = cfg.effective_hyperparams();
    let state = fit::<f64>(&prepared.graph, &prepared.split, &hyper, on_epoch)?;
    let checkpoint = Checkpoint {
        hyper,
        epoch: state.best_epoch,
        graph: prepared.graph.clone(),
        params: state.best_params,
    };
    Ok((checkpoint, state.history))
}

/// Test-split metrics at every cut-off.
pub fn test_metrics(
    graph: &BipartiteGraph,
    params: &ModelParams<f64>,
    test: &[InteractionRecord],
    ks: &[usize],
) -> Result<Vec<MetricsReport>> {
    let emb = forward(graph, params)?;
    evaluate_embeddings(
        graph,
        &emb.z_user,
        &emb.z_item,
        &params.rank_decoder,
        test,
        ks,
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint<f64>,
    pub history: Vec<EpochRecord>,
    pub checkpoint_path: PathBuf,
    pub history_path: PathBuf,
    pub config_path: PathBuf,
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let prepared = prepare(cfg)?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let config_path = dir.join(RESOLVED_CONFIG_FILE);
    write_file(&config_path, &cfg.to_toml())?;

    let history_path = dir.join(HISTORY_FILE);
    let mut history_file = File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    let mut io_err = None;
    let (checkpoint, history) = train_prepared(cfg, &prepared, &mut |r| {
        if io_err.is_none() {
            if let Err(e) = writeln!(history_file, "{}", r.to_line()) {
                io_err = Some(e);
            }
        }
        on_epoch(r);
    })?;
    if let Some(e) = io_err {
        return Err(Error::io(&history_path, e));
    }

    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    checkpoint.save(&checkpoint_path)?;
    Ok(TrainOutcome {
        checkpoint,
        history,
        checkpoint_path,
        history_path,
        config_path,
    })
}

pub fn metrics_paths(dir: &Path, k: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("metrics_k{k}.txt")),
        dir.join(format!("metrics_k{k}.toml")),
    )
}

/// Scores a checkpoint on the configured test split and writes one report
/// per cut-off.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint_path: &Path) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    let checkpoint = Checkpoint::<f64>::load(checkpoint_path)?;
    let records = load_records(cfg)?;
    let split = split_dataset(&records, cfg.split.ratios, cfg.split.seed)?;
    let reports = test_metrics(
        &checkpoint.graph,
        &checkpoint.params,
        &split.test,
        &cfg.eval.k,
    )?;
    ensure_dir(&cfg.output_dir)?;
    for r in &reports {
        let (line, doc) = metrics_paths(&cfg.output_dir, r.k);
        write_file(&line, &format!("{}\n", r.to_line()))?;
        write_file(&doc, &r.to_document())?;
    }
    Ok(reports)
}

pub fn cmd_recommend(
    checkpoint_path: &Path,
    k: usize,
    n_workers: usize,
    out: &Path,
) -> Result<RecommendationBatch> {
    let checkpoint = Checkpoint::<f64>::load(checkpoint_path)?;
    let emb = forward(&checkpoint.graph, &checkpoint.params)?;
    let batch = generate_topk(
        &checkpoint.graph,
        &emb.z_user,
        &emb.z_item,
        &checkpoint.params.rank_decoder,
        k,
        n_workers,
    )?;
    write_recommendations(&batch, out)?;
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoCtr,
    NoSequence,
    NoBpr,
    NoBehavior,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoCtr,
        Variant::NoSequence,
        Variant::NoBpr,
        Variant::NoBehavior,
    ];

    /// The config with this variant's component removed.
    pub fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        c.ablation = Default::default();
        match self {
            Variant::Full => {}
            Variant::NoCtr => c.ablation.disable_ctr = true,
            Variant::NoSequence => c.ablation.disable_seq = true,
            Variant::NoBpr => c.ablation.disable_bpr = true,
            Variant::NoBehavior => c.ablation.disable_behavior_weighting = true,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoCtr => "-CTR",
            Variant::NoSequence => "-Sequence",
            Variant::NoBpr => "-BPR",
            Variant::NoBehavior => "-Behavior",
        })
    }
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    /// Test metrics per variant, one report per configured cut-off.
    pub rows: Vec<(Variant, Vec<MetricsReport>)>,
}

impl AblationTable {
    /// Metrics at cut-off `k` for one variant.
    pub fn get(&self, variant: Variant, k: usize) -> Option<&MetricsReport> {
        self.rows
            .iter()
            .find(|(v, _)| *v == variant)
            .and_then(|(_, rs)| rs.iter().find(|r| r.k == k))
    }

    /// `variant, k, recall, urecall, ndcg` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("variant, k, recall, urecall, ndcg\n");
        for (v, reports) in &self.rows {
            for r in reports {
                out.push_str(&format!(
                    "{v}, {}, {}, {}, {}\n",
                    r.k, r.recall, r.urecall, r.ndcg
                ));
            }
        }
        out
    }
}

/// Trains every variant from the same split and initialization seed and
/// scores its best-validation parameters on the test split.
pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    on_variant: &mut dyn FnMut(Variant, &[MetricsReport]),
) -> Result<AblationTable> {
    let base = prepare(&Variant::Full.apply(cfg))?;
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let vcfg = variant.apply(cfg);
        let prepared = if vcfg.ablation.disable_behavior_weighting {
            Prepared {
                split: base.split.clone(),
                graph: base.graph.with_unit_weights(),
            }
        } else {
            base.clone()
        };
        let (ck, _) = train_prepared(&vcfg, &prepared, &mut |_| {})?;
        let reports = test_metrics(&ck.graph, &ck.params, &prepared.split.test, &cfg.eval.k)?;
        on_variant(variant, &reports);
        rows.push((variant, reports));
    }
    let table = AblationTable { rows };
    ensure_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join(ABLATION_FILE), &table.to_text())?;
    Ok(table)
}

pub fn cmd_gradcheck(spec: InstanceSpec, step: f64, tolerance: f64) -> Result<GradcheckReport> {
    check_gradients(&random_instance(spec)?, step, tolerance)
}

/// Test metrics as one loss weight moves while the other two stay at 1.
#[derive(Debug, Clone)]
pub struct SweepCurve {
    /// 1, 2 or 3.
    pub lambda: usize,
    pub k: usize,
    pub points: Vec<(f64, MetricsReport)>,
}

impl SweepCurve {
    pub fn file_name(&self) -> String {
        format!("sweep_lambda{}.txt", self.lambda)
    }

    /// `value, recall, urecall, ndcg` per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("lambda{}, recall, urecall, ndcg\n", self.lambda);
        for (x, r) in &self.points {
            out.push_str(&format!("{x}, {}, {}, {}\n", r.recall, r.urecall, r.ndcg));
        }
        out
    }

    /// Whether some interior point beats both endpoints on `metric`.
    pub fn interior_beats_endpoints(&self, metric: fn(&MetricsReport) -> f64) -> bool {
        let n = self.points.len();
        if n < 3 {
            return false;
        }
        let first = metric(&self.points[0].1);
        let last = metric(&self.points[n - 1].1);
        self.points[1..n - 1]
            .iter()
            .any(|(_, r)| metric(r) > first && metric(r) > last)
    }
}

/// Runs the loss-weight sweep at the first configured cut-off and writes one
/// curve file per weight. The all-ones point is trained once and shared.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    on_point: &mut dyn FnMut(usize, f64, &MetricsReport),
) -> Result<Vec<SweepCurve>> {
    let prepared = prepare(cfg)?;
    let k = cfg.eval.k[0];
    let mut shared: Option<MetricsReport> = None;
    let mut curves = Vec::with_capacity(3);
    for lambda in 1..=3 {
        let mut points = Vec::with_capacity(cfg.sweep.values.len());
        for &x in &cfg.sweep.values {
            let report = match shared {
                Some(r) if x == 1.0 => r,
                _ => {
                    let mut c = cfg.clone();
                    c.model.lambda1 = 1.0;
                    c.model.lambda2 = 1.0;
                    c.model.lambda3 = 1.0;
                    match lambda {
                        1 => c.model.lambda1 = x,
                        2 => c.model.lambda2 = x,
                        _ => c.model.lambda3 = x,
                    }
                    let (ck, _) = train_prepared(&c, &prepared, &mut |_| {})?;
                    let r = test_metrics(&ck.graph, &ck.params, &prepared.split.test, &[k])?[0];
                    if x == 1.0 {
                        shared = Some(r);
                    }
                    r
                }
            };
            on_point(lambda, x, &report);
            points.push((x, report));
        }
        curves.push(SweepCurve { lambda, k, points });
    }
    ensure_dir(&cfg.output_dir)?;
    for c in &curves {
        write_file(&cfg.output_dir.join(c.file_name()), &c.to_text())?;
    }
    Ok(curves)
}
