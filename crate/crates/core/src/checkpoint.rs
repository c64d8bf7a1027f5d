//! Self-contained text checkpoints: hyperparameters, the training graph and
//! every parameter tensor. Reals are stored as the hex bit pattern of their
//! `f64` value so a save/load cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{BipartiteGraph, Edge, KeyIndex};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Hyperparams, ModelParams};
use crate::scalar::Scalar;

const MAGIC: &str = "bgcf-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub hyper: Hyperparams,
    /// Epoch the parameters were taken from (0 when untrained).
    pub epoch: usize,
    pub graph: BipartiteGraph,
    pub params: ModelParams<T>,
}

fn hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn unhex(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Checkpoint(format!("bad real `{s}`")))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let hyper = toml::to_string(&self.hyper).expect("hyperparams serialize");
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "scalar {}", T::NAME);
        let _ = writeln!(out, "epoch {}", self.epoch);
        let _ = writeln!(out, "hyperparams {}", hyper.lines().count());
        out.push_str(&hyper);
        for (label, index) in [("users", self.graph.users()), ("items", self.graph.items())] {
            let _ = writeln!(out, "{label} {}", index.len());
            for key in index.keys() {
                let _ = writeln!(out, "{key}");
            }
        }
        let _ = writeln!(out, "edges {}", self.graph.n_edges());
        for e in self.graph.edges() {
            let _ = writeln!(out, "{} {} {}", e.user, e.item, hex(e.weight));
        }
        for (name, m) in self.params.tensors() {
            let _ = writeln!(out, "tensor {name} {} {}", m.rows(), m.cols());
            for r in 0..m.rows() {
                let row: Vec<String> = m.row(r).iter().map(|x| hex(x.as_f64())).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
        };
        lines.expect_exact(MAGIC)?;
        let scalar = lines.header("scalar")?;
        if scalar != T::NAME {
            return Err(Error::Checkpoint(format!(
                "stored as {scalar}, requested {}",
                T::NAME
            )));
        }
        let epoch = lines.count("epoch")?;
        let n_hyper = lines.count("hyperparams")?;
        let mut hyper_text = String::new();
        for _ in 0..n_hyper {
            hyper_text.push_str(lines.next()?.1);
            hyper_text.push('\n');
        }
        let hyper: Hyperparams = toml::from_str(&hyper_text)
            .map_err(|e| Error::Checkpoint(format!("hyperparams: {e}")))?;
        let mut indices = Vec::with_capacity(2);
        for label in ["users", "items"] {
            let n = lines.count(label)?;
            let keys = (0..n)
                .map(|_| lines.next().map(|(_, l)| l.to_string()))
                .collect::<Result<Vec<_>>>()?;
            indices.push(KeyIndex::from_keys(keys)?);
        }
        let items = indices.pop().expect("two indices");
        let users = indices.pop().expect("two indices");
        let n_edges = lines.count("edges")?;
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let (i, line) = lines.next()?;
            let f: Vec<&str> = line.split(' ').collect();
            let [u, v, w] = f[..] else {
                return Err(Error::Checkpoint(format!("line {}: malformed edge", i + 1)));
            };
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("line {}: bad index `{s}`", i + 1)))
            };
            edges.push(Edge {
                user: parse(u)?,
                item: parse(v)?,
                weight: unhex(w)?,
            });
        }
        let graph = BipartiteGraph::from_parts(users, items, edges)?;

        let mut params = crate::model::init_params::<T>(&graph, &hyper);
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let header = lines.header("tensor")?;
            let f: Vec<&str> = header.split(' ').collect();
            let [stored, rows, cols] = f[..] else {
                return Err(Error::Checkpoint(format!(
                    "malformed tensor header `{header}`"
                )));
            };
            if stored != name {
                return Err(Error::Checkpoint(format!(
                    "expected tensor `{name}`, found `{stored}`"
                )));
            }
            let shape = (
                rows.parse::<usize>().unwrap_or(usize::MAX),
                cols.parse::<usize>().unwrap_or(usize::MAX),
            );
            if shape != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` is {rows}x{cols}, expected {}x{}",
                    slot.rows(),
                    slot.cols()
                )));
            }
            let mut data = Vec::with_capacity(shape.0 * shape.1);
            for _ in 0..shape.0 {
                let (i, line) = lines.next()?;
                let before = data.len();
                for tok in line.split(' ').filter(|t| !t.is_empty()) {
                    data.push(T::of(unhex(tok)?));
                }
                if data.len() - before != shape.1 {
                    return Err(Error::Checkpoint(format!(
                        "line {}: tensor `{name}` row has {} values",
                        i + 1,
                        data.len() - before
                    )));
                }
            }
            *slot = Matrix::from_vec(shape.0, shape.1, data)?;
        }
        lines.expect_exact("end")?;
        Ok(Checkpoint {
            hyper,
            epoch,
            graph,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

struct Lines<'a, I: Iterator<Item = (usize, &'a str)>> {
    inner: I,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Lines<'a, I> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    fn expect_exact(&mut self, want: &str) -> Result<()> {
        let (i, line) = self.next()?;
        if line != want {
            return Err(Error::Checkpoint(format!(
                "line {}: expected `{want}`, found `{line}`",
                i + 1
            )));
        }
        Ok(())
    }

    fn header(&mut self, tag: &str) -> Result<&'a str> {
        let (i, line) = self.next()?;
        line.strip_prefix(tag)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| Error::Checkpoint(format!("line {}: expected `{tag} ...`", i + 1)))
    }

    fn count(&mut self, tag: &str) -> Result<usize> {
        let v = self.header(tag)?;
        v.parse()
            .map_err(|_| Error::Checkpoint(format!("bad `{tag}` count `{v}`")))
    }
}
