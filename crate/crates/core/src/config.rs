//! Run configuration: one JSON file with `model`, `loss`, `train`, `data`
//! and `prior` sections. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datapipe::{load_manifest, split_holdout, AugmentConfig, Layout, Record, SampleManifest};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::RegionRule;
use crate::model::{InitConfig, ModelConfig};
use crate::prior::{EdgeMode, PriorConfig};

pub const SEED_ENV: &str = "SCNET_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Hard cap on optimiser steps, across epochs.
    pub max_iterations: Option<u64>,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: usize,
    /// Validation cadence in epochs.
    pub eval_every: usize,
    /// Stop after this many validations without F1 improvement (0: never).
    pub patience: usize,
    pub deterministic: bool,
    /// Only `cpu` is supported.
    pub device: String,
    pub init: InitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 2e-4,
            batch_size: 4,
            epochs: 100,
            max_iterations: None,
            seed: 0,
            checkpoint_every: 10,
            eval_every: 1,
            patience: 10,
            deterministic: true,
            device: "cpu".into(),
            init: InitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("train.learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("train.momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("train.eval_every must be >= 1".into()));
        }
        if self.device != "cpu" {
            return Err(Error::Config(format!("unsupported device `{}`; only `cpu` is available", self.device)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root scanned with `layout`.
    pub root: Option<PathBuf>,
    /// A `manifest.json`, used instead of scanning `root`.
    pub manifest: Option<PathBuf>,
    pub layout: Layout,
    /// Share of samples held out for testing.
    pub holdout: f64,
    /// Share of the training split used for early stopping (0: none).
    pub validation: f64,
    pub augment: AugmentConfig,
    pub region: RegionRule,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            manifest: None,
            layout: Layout::default(),
            holdout: 0.2,
            validation: 0.1,
            augment: AugmentConfig::default(),
            region: RegionRule::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(Error::Config(format!("data.holdout must lie in (0, 1), got {}", self.holdout)));
        }
        if !(0.0..1.0).contains(&self.validation) {
            return Err(Error::Config(format!("data.validation must lie in [0, 1), got {}", self.validation)));
        }
        self.augment.validate()
    }

    /// The records of the dataset: `manifest` when given, else a scan of `root`.
    pub fn records(&self) -> Result<SampleManifest> {
        let mut m = match (&self.manifest, &self.root) {
            (Some(path), _) => SampleManifest::read_json(path)?,
            (None, Some(root)) => load_manifest(root, &self.layout)?,
            (None, None) => return Err(Error::Config("data.root or data.manifest is required".into())),
        };
        for r in m.rejected.iter() {
            log::warn!("skipping {}: {}", r.path.display(), r.reason);
        }
        if !self.layout.dataset.is_empty() {
            for r in m.records.iter_mut().filter(|r| r.dataset.is_empty()) {
                r.dataset = self.layout.dataset.clone();
            }
        }
        if m.is_empty() {
            return Err(Error::Data("dataset has no usable samples".into()));
        }
        Ok(m)
    }

    /// Train, validation and test records. The test split is `holdout` of
    /// everything; validation is `validation` of the rest, drawn with the
    /// next seed.
    pub fn splits(&self, seed: u64) -> Result<Splits> {
        let records = self.records()?.records;
        let (rest, test) = split_holdout(&records, self.holdout, seed)?;
        let (train, validation) = if self.validation > 0.0 {
            split_holdout(&rest, self.validation, seed.wrapping_add(1))?
        } else {
            (rest, Vec::new())
        };
        if train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        Ok(Splits { train, validation, test })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Record>,
    pub validation: Vec<Record>,
    pub test: Vec<Record>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub prior: PriorConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// Makes relative data, init and prior paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        fix(&mut self.data.root);
        fix(&mut self.data.manifest);
        fix(&mut self.train.init.checkpoint);
        fix(&mut self.prior.checkpoint);
    }

    /// Sets a dotted key such as `train.learning_rate`. The value is read as
    /// JSON when it parses, otherwise as a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self).expect("config serialises");
        let mut node = &mut tree;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("`{}` is not a section", parts[..i].join("."))))?;
            node = obj
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        *node = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("--set {key}={value}: {e}")))?;
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Replaces `train.seed` with `SCNET_SEED` when that is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate(self.model.num_scales)?;
        self.train.validate()?;
        self.data.validate()?;
        self.prior.validate()?;
        if self.model.input_channels == 3 && self.prior.mode == EdgeMode::LearnedEdgeDetector {
            log::warn!("a learned edge detector is configured but the model takes no edge channel");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}
