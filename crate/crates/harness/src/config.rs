//! Experiment configuration: a TOML document with one table per concern.
//!
//! Only `[dataset]` and `[model]` are required; every other key has a
//! default. See [`CONFIG_REFERENCE`] for the full grammar.

use std::fs;
use std::path::{Path, PathBuf};

use lap_core::corruption::{CorruptionMode, CorruptionSpec};
use lap_core::{LapParams, ModelSpec, OptimizerKind};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Every configuration key, its default and meaning. Printed by `--help`.
pub const CONFIG_REFERENCE: &str = "\
CONFIG FILE (TOML)

[dataset]                      required
  kind = \"blobs\" | \"idx\" | \"csv\"
  # kind = \"blobs\"
  n_classes = 3                number of Gaussian clusters
  n_per_class = 200            training-pool points per class
  test_per_class = 200         clean test points per class
  centers = [[x, y], ...]      class centers (default: evenly spaced on a circle of radius 3)
  spread = 1.0                 per-axis standard deviation around each center
  fraction_reliable = 0.6      share of sources left clean by `BlobSpec::motivation`
  # kind = \"idx\"
  train_images, train_labels   IDX files (magic 0x00000803 / 0x00000801)
  test_images, test_labels     optional; otherwise `test_fraction` of train is held out
  test_fraction = 0.2
  # kind = \"csv\"
  path                         CSV with a header row
  label_column = \"label\"       integer class column; every other column is a feature
  test_path                    optional; otherwise `test_fraction` is held out
  test_fraction = 0.2

[model]                        required
  kind = \"logistic-regression\" | \"mlp\"
  widths = [features, ..., classes]
  activation = \"relu\" | \"tanh\" | \"identity\"   (default relu)

[optimizer]
  kind = \"adam\" | \"sgd\"        (default adam)
  learning_rate = 0.001
  momentum = 0.0               sgd only
  weight_decay = 0.0
  beta1 = 0.9, beta2 = 0.999, eps = 1e-8        adam only

[lap]
  enabled = true
  leniency = 0.8
  depression_strength = 1.0
  history_length = 25
  hold_off = 0                 steps after all histories fill before depression starts

[sources]
  n_sources = 10
  n_corrupt = 0                must be < n_sources
  reliable_after_step          optional; corrupt sources emit clean data from this step on
  upsample = false             resample smaller sources up to the largest size
  exclude_corrupt = false      train only on the clean sources (reference baseline)
  [sources.corruption]
  mode = \"original\" | \"chunk_shuffle\" | \"random_label\" | \"batch_label_shuffle\"
       | \"batch_label_flip\" | \"add_gaussian_noise\" | \"replace_gaussian_noise\"
  rate = 1.0                   fraction of items (or chance per batch for batch_label_*)
  chunks = 4                   chunk_shuffle: chunks per axis
  chunk_axes = [0]             chunk_shuffle: axes of input_shape to chunk
  input_shape                  chunk_shuffle: e.g. [28, 28]; defaults to the flat vector

[training]
  epochs = 10
  batch_size = 32
  train_val_ratio = 3.0        training:validation split of the non-test data
  trace_every = 1              write distrust trace rows every N steps

[sweep]                        used by `lap sweep`; empty lists keep the configured value
  leniency = []
  depression_strength = []
  history_length = []
  corruption_rate = []

seeds = [0]                    one run per seed
output_dir = \"runs\"
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs(BlobSpec),
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}
fn default_label_column() -> String {
    "label".into()
}

/// Gaussian clusters in the plane, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    #[serde(default = "default_n_classes")]
    pub n_classes: usize,
    #[serde(default = "default_per_class")]
    pub n_per_class: usize,
    #[serde(default = "default_per_class")]
    pub test_per_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_fraction_reliable")]
    pub fraction_reliable: f64,
}

fn default_n_classes() -> usize {
    3
}
fn default_per_class() -> usize {
    200
}
fn default_spread() -> f64 {
    1.0
}
fn default_fraction_reliable() -> f64 {
    0.6
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            n_classes: default_n_classes(),
            n_per_class: default_per_class(),
            test_per_class: default_per_class(),
            centers: None,
            spread: default_spread(),
            fraction_reliable: default_fraction_reliable(),
        }
    }
}

impl BlobSpec {
    /// Explicit centers, or `n_classes` points evenly spaced on a circle of
    /// radius 3.
    pub fn resolved_centers(&self) -> Vec<Vec<f64>> {
        self.centers.clone().unwrap_or_else(|| {
            (0..self.n_classes)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / self.n_classes as f64;
                    vec![3.0 * a.cos(), 3.0 * a.sin()]
                })
                .collect()
        })
    }

    pub fn dim(&self) -> usize {
        self.resolved_centers().first().map_or(2, Vec::len)
    }

    /// Number of unreliable sources out of `n_sources` implied by
    /// `fraction_reliable`.
    pub fn unreliable_sources(&self, n_sources: usize) -> usize {
        ((1.0 - self.fraction_reliable) * n_sources as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("dataset.{f}");
        if self.n_classes < 2 {
            return Err(HarnessError::config(
                field("n_classes"),
                "needs at least 2 classes",
            ));
        }
        if self.n_per_class == 0 || self.test_per_class == 0 {
            return Err(HarnessError::config(field("n_per_class"), "must be >= 1"));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(HarnessError::config(
                field("spread"),
                "must be finite and >= 0",
            ));
        }
        if !(0.0..=1.0).contains(&self.fraction_reliable) {
            return Err(HarnessError::config(
                field("fraction_reliable"),
                "must lie in [0, 1]",
            ));
        }
        let centers = self.resolved_centers();
        if centers.len() != self.n_classes {
            return Err(HarnessError::config(
                field("centers"),
                format!("{} centers for {} classes", centers.len(), self.n_classes),
            ));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(HarnessError::config(
                field("centers"),
                "centers must share one non-zero dimension",
            ));
        }
        for i in 0..centers.len() {
            for j in 0..i {
                if centers[i] == centers[j] {
                    return Err(HarnessError::config(
                        field("centers"),
                        format!("centers {j} and {i} coincide"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Setup of the three-class motivation example: ten sources, the
    /// unreliable share given by `fraction_reliable`, labels randomized.
    pub fn motivation(self) -> ExperimentConfig {
        let n_sources = 10;
        let n_corrupt = self.unreliable_sources(n_sources);
        let classes = self.n_classes;
        let dim = self.dim();
        let mut cfg = ExperimentConfig::new(
            DatasetConfig::Blobs(self),
            ModelSpec::logistic_regression(dim, classes),
        );
        cfg.sources.n_sources = n_sources;
        cfg.sources.n_corrupt = n_corrupt;
        cfg.sources.corruption = CorruptionSpec::new(CorruptionMode::RandomLabel, 1.0);
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub kind: OptimizerName,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_lr() -> f64 {
    0.001
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerName::Adam,
            learning_rate: default_lr(),
            momentum: 0.0,
            weight_decay: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerName::Sgd,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn rule(&self) -> OptimizerKind {
        match self.kind {
            OptimizerName::Sgd => OptimizerKind::Sgd {
                momentum: self.momentum,
                weight_decay: self.weight_decay,
            },
            OptimizerName::Adam => OptimizerKind::Adam {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LapConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_leniency")]
    pub leniency: f64,
    #[serde(default = "default_depression_strength")]
    pub depression_strength: f64,
    #[serde(default = "default_history_length")]
    pub history_length: usize,
    #[serde(default)]
    pub hold_off: usize,
}

fn yes() -> bool {
    true
}
fn default_leniency() -> f64 {
    LapParams::default().leniency
}
fn default_depression_strength() -> f64 {
    LapParams::default().depression_strength
}
fn default_history_length() -> usize {
    LapParams::default().history_length
}

impl Default for LapConfig {
    fn default() -> Self {
        let p = LapParams::default();
        Self {
            enabled: true,
            leniency: p.leniency,
            depression_strength: p.depression_strength,
            history_length: p.history_length,
            hold_off: p.hold_off,
        }
    }
}

impl LapConfig {
    pub fn params(&self) -> LapParams {
        LapParams {
            leniency: self.leniency,
            depression_strength: self.depression_strength,
            history_length: self.history_length,
            hold_off: self.hold_off,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesConfig {
    #[serde(default = "default_n_sources")]
    pub n_sources: usize,
    #[serde(default)]
    pub n_corrupt: usize,
    #[serde(default = "CorruptionSpec::original")]
    pub corruption: CorruptionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliable_after_step: Option<usize>,
    #[serde(default)]
    pub upsample: bool,
    #[serde(default)]
    pub exclude_corrupt: bool,
}

fn default_n_sources() -> usize {
    10
}

impl Default for SourcesConfig {
    fn default() -> Self {
        Self {
            n_sources: default_n_sources(),
            n_corrupt: 0,
            corruption: CorruptionSpec::original(),
            reliable_after_step: None,
            upsample: false,
            exclude_corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_ratio")]
    pub train_val_ratio: f64,
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
}

fn default_epochs() -> usize {
    10
}
fn default_batch_size() -> usize {
    32
}
fn default_ratio() -> f64 {
    3.0
}
fn default_trace_every() -> usize {
    1
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            train_val_ratio: default_ratio(),
            trace_every: default_trace_every(),
        }
    }
}

/// Axes of a hyperparameter sweep. An empty axis keeps the configured value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub leniency: Vec<f64>,
    #[serde(default)]
    pub depression_strength: Vec<f64>,
    #[serde(default)]
    pub history_length: Vec<usize>,
    #[serde(default)]
    pub corruption_rate: Vec<f64>,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.leniency.is_empty()
            && self.depression_strength.is_empty()
            && self.history_length.is_empty()
            && self.corruption_rate.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub lap: LapConfig,
    #[serde(default)]
    pub sources: SourcesConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default, skip_serializing_if = "SweepGrid::is_empty")]
    pub sweep: SweepGrid,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetConfig, model: ModelSpec) -> Self {
        Self {
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            dataset,
            model,
            optimizer: OptimizerConfig::default(),
            lap: LapConfig::default(),
            sources: SourcesConfig::default(),
            training: TrainingConfig::default(),
            sweep: SweepGrid::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<inline>"))
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::config("<config>", e.to_string()))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every constraint that does not need the data itself.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::config(
                "seeds",
                "at least one seed is required",
            ));
        }
        match &self.dataset {
            DatasetConfig::Blobs(b) => b.validate()?,
            DatasetConfig::Idx { test_fraction, .. } | DatasetConfig::Csv { test_fraction, .. } => {
                if !(0.0..1.0).contains(test_fraction) {
                    return Err(HarnessError::config(
                        "dataset.test_fraction",
                        "must lie in [0, 1)",
                    ));
                }
            }
        }
        self.model
            .validate()
            .map_err(|e| HarnessError::config("model", e.to_string()))?;
        if let DatasetConfig::Blobs(b) = &self.dataset {
            if self.model.features() != b.dim() {
                return Err(HarnessError::config(
                    "model.widths",
                    format!(
                        "first width {} differs from blob dimension {}",
                        self.model.features(),
                        b.dim()
                    ),
                ));
            }
            if self.model.classes() != b.n_classes {
                return Err(HarnessError::config(
                    "model.widths",
                    format!(
                        "last width {} differs from {} classes",
                        self.model.classes(),
                        b.n_classes
                    ),
                ));
            }
        }
        self.optimizer
            .rule()
            .validate()
            .map_err(|e| HarnessError::config("optimizer", e.to_string()))?;
        if !(self.optimizer.learning_rate > 0.0 && self.optimizer.learning_rate.is_finite()) {
            return Err(HarnessError::config(
                "optimizer.learning_rate",
                "must be > 0",
            ));
        }
        self.lap
            .params()
            .validate()
            .map_err(|e| HarnessError::config("lap", e.to_string()))?;
        let s = &self.sources;
        if s.n_sources < 2 {
            return Err(HarnessError::config("sources.n_sources", "must be >= 2"));
        }
        if s.n_corrupt >= s.n_sources {
            return Err(HarnessError::config(
                "sources.n_corrupt",
                format!(
                    "{} must be smaller than n_sources = {}",
                    s.n_corrupt, s.n_sources
                ),
            ));
        }
        if !(0.0..=1.0).contains(&s.corruption.rate) {
            return Err(HarnessError::config(
                "sources.corruption.rate",
                "must lie in [0, 1]",
            ));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(HarnessError::config("training.batch_size", "must be >= 1"));
        }
        if t.epochs == 0 {
            return Err(HarnessError::config("training.epochs", "must be >= 1"));
        }
        if !(t.train_val_ratio > 0.0 && t.train_val_ratio.is_finite()) {
            return Err(HarnessError::config(
                "training.train_val_ratio",
                "must be > 0",
            ));
        }
        if t.trace_every == 0 {
            return Err(HarnessError::config("training.trace_every", "must be >= 1"));
        }
        for (name, bad) in [
            (
                "sweep.leniency",
                self.sweep.leniency.iter().any(|&l| l.is_nan() || l <= 0.0),
            ),
            (
                "sweep.depression_strength",
                self.sweep
                    .depression_strength
                    .iter()
                    .any(|&d| d.is_nan() || d <= 0.0),
            ),
            (
                "sweep.history_length",
                self.sweep.history_length.iter().any(|&h| h < 2),
            ),
            (
                "sweep.corruption_rate",
                self.sweep
                    .corruption_rate
                    .iter()
                    .any(|r| !(0.0..=1.0).contains(r)),
            ),
        ] {
            if bad {
                return Err(HarnessError::config(name, "value out of range"));
            }
        }
        Ok(())
    }
}

/// Reads and validates a config file, filling defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    ExperimentConfig::parse(&text, path)
}
