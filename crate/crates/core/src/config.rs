//! Experiment configuration documents (TOML).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{BehaviorScoreMap, InputFormat};
use crate::error::{Error, Result};
use crate::model::Hyperparams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: InputFormat,
    /// Behavior label to score. When absent, labels are parsed as numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_scores: Option<BTreeMap<String, f64>>,
}

fn default_format() -> InputFormat {
    InputFormat::MovielensTab
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.7, 0.1, 0.2],
            seed: 2021,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: vec![10] }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub disable_bpr: bool,
    pub disable_ctr: bool,
    pub disable_seq: bool,
    pub disable_behavior_weighting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Values tried for each loss weight while the other two stay at 1.
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            values: vec![0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: Hyperparams,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            output_dir: output_dir.into(),
            dataset: DatasetConfig {
                path: dataset.into(),
                format: default_format(),
                behavior_scores: None,
            },
            split: SplitConfig::default(),
            model: Hyperparams::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset.path, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.path.as_os_str().is_empty() {
            return Err(Error::Config("dataset.path is empty".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir is empty".into()));
        }
        if self.eval.k.is_empty() || self.eval.k.contains(&0) {
            return Err(Error::Config("eval.k must list values >= 1".into()));
        }
        let a = &self.ablation;
        if a.disable_bpr && a.disable_ctr && a.disable_seq {
            return Err(Error::Config("ablation disables every loss".into()));
        }
        if self
            .sweep
            .values
            .iter()
            .any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Config("sweep.values must be finite and >= 0".into()));
        }
        self.score_map()?;
        self.effective_hyperparams().validate()
    }

    pub fn score_map(&self) -> Result<BehaviorScoreMap> {
        match &self.dataset.behavior_scores {
            None => Ok(BehaviorScoreMap::numeric()),
            Some(m) => BehaviorScoreMap::new(m.iter().map(|(k, &v)| (k.clone(), v))),
        }
    }

    /// Model hyperparameters with disabled losses given zero weight.
    pub fn effective_hyperparams(&self) -> Hyperparams {
        let mut h = self.model.clone();
        if self.ablation.disable_bpr {
            h.lambda1 = 0.0;
        }
        if self.ablation.disable_ctr {
            h.lambda2 = 0.0;
        }
        if self.ablation.disable_seq {
            h.lambda3 = 0.0;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg =
            ExperimentConfig::from_toml("output_dir = \"out\"\n[dataset]\npath = \"u.data\"\n")
                .unwrap();
        assert_eq!(cfg, ExperimentConfig::new("u.data", "out"));
        assert_eq!(cfg.model.embed_dim, 64);
        assert_eq!(cfg.eval.k, vec![10]);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::new("d.csv", "o");
        cfg.dataset.format = InputFormat::GenericCsv;
        cfg.dataset.behavior_scores = Some([("click".to_string(), 0.5)].into());
        cfg.ablation.disable_ctr = true;
        cfg.model.batch_size = Some(100);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn all_losses_disabled_rejected() {
        let mut cfg = ExperimentConfig::new("d", "o");
        cfg.ablation = AblationConfig {
            disable_bpr: true,
            disable_ctr: true,
            disable_seq: true,
            disable_behavior_weighting: false,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::from_toml(
            "output_dir = \"o\"\n[dataset]\npath = \"d\"\n[model]\nembed_size = 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("embed_size"));
    }

    #[test]
    fn zero_k_rejected() {
        let mut cfg = ExperimentConfig::new("d", "o");
        cfg.eval.k = vec![10, 0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn disabled_losses_zero_their_weights() {
        let mut cfg = ExperimentConfig::new("d", "o");
        cfg.ablation.disable_bpr = true;
        let h = cfg.effective_hyperparams();
        assert_eq!((h.lambda1, h.lambda2, h.lambda3), (0.0, 1.0, 1.0));
    }
}
