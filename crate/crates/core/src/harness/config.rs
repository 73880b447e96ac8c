//! Run configuration. Files are TOML; every key can be overridden from the
//! command line and flags win.
//!
//! ```toml
//! preset = "micro"
//! epochs = 5
//! seeds = [0, 1, 2, 3, 4]
//! batch_size = 16
//! output_dir = "runs/learner"
//!
//! [strategy]
//! kind = "learner"        # full | bitfit | freeze_ffns | adapter_sequential | adapter_parallel | learner
//! rank = 8
//! priming_epochs = 2
//!
//! [optim]
//! base_lr = 1e-3
//!
//! [dataset]
//! source = "synthetic"    # or "tsv"
//! kind = "parity"
//! n_examples = 400
//! seed = 0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{synth_task_with, DatasetTask, SplitDataset, Split, Strictness, SynthConfig, SynthKind, TsvSchema};
use crate::error::{Error, Result};
use crate::learner::LearnerInit;
use crate::model::ModelConfig;
use crate::optim::OptimConfig;
use crate::strategy::StrategySpec;

pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_ADAPTER_HIDDEN: usize = 8;
pub const DEFAULT_PARALLEL_SCALE: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsvSource {
    pub train: PathBuf,
    #[serde(default)]
    pub validation: Option<PathBuf>,
    pub sentence_columns: Vec<String>,
    pub label_column: String,
    pub task: DatasetTask,
    #[serde(default)]
    pub strictness: Strictness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    Tsv(TsvSource),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SynthConfig::new(SynthKind::Parity, 400, 0))
    }
}

impl DatasetSource {
    pub fn load(&self, model: &ModelConfig) -> Result<SplitDataset> {
        match self {
            DatasetSource::Synthetic(cfg) => synth_task_with(cfg),
            DatasetSource::Tsv(src) => {
                let schema = TsvSchema {
                    sentence_columns: src.sentence_columns.clone(),
                    label_column: src.label_column.clone(),
                    task: src.task,
                    vocab_size: model.vocab_size,
                    max_seq_len: model.max_seq_len,
                };
                let train = crate::data::load_tsv(&src.train, &schema, src.strictness, Split::Train)?;
                for s in &train.skipped {
                    eprintln!("{}:{}: skipped: {}", src.train.display(), s.line, s.reason);
                }
                let validation = match &src.validation {
                    Some(path) => {
                        let v = crate::data::load_tsv(path, &schema, src.strictness, Split::Validation)?;
                        for s in &v.skipped {
                            eprintln!("{}:{}: skipped: {}", path.display(), s.line, s.reason);
                        }
                        v.dataset
                    }
                    None => crate::data::Dataset::new(Vec::new(), src.task, Split::Validation)?,
                };
                Ok(SplitDataset {
                    train: train.dataset,
                    validation,
                })
            }
        }
    }

    pub fn task(&self) -> DatasetTask {
        match self {
            DatasetSource::Synthetic(cfg) => match cfg.kind {
                SynthKind::LinearRegression => DatasetTask::Regression,
                _ => DatasetTask::Classification { num_labels: 2 },
            },
            DatasetSource::Tsv(src) => src.task,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_preset")]
    pub preset: String,
    /// Label for outputs; defaults to the strategy label.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_strategy")]
    pub strategy: StrategySpec,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub checkpoints: bool,
    /// Also checkpoint the model at the start of every epoch.
    #[serde(default)]
    pub epoch_checkpoints: bool,
}

fn default_preset() -> String {
    "micro".into()
}
fn default_strategy() -> StrategySpec {
    StrategySpec::Full
}
fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}
fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}
fn default_batch_size() -> usize {
    crate::data::DEFAULT_BATCH_SIZE
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_true() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            name: None,
            strategy: default_strategy(),
            optim: OptimConfig::default(),
            epochs: DEFAULT_EPOCHS,
            seeds: default_seeds(),
            batch_size: default_batch_size(),
            dataset: DatasetSource::default(),
            output_dir: default_output_dir(),
            checkpoints: true,
            epoch_checkpoints: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Usage(format!("run config: {e}")))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.strategy.label())
    }

    /// Model configuration: the preset with the dataset's head.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let (task, labels) = self.dataset.task().model_task();
        let cfg = ModelConfig::preset(&self.preset)?.with_task(task, labels);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Usage("epochs must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Usage("at least one seed is required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch size must be at least 1".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Usage("seeds must be distinct".into()));
        }
        self.strategy.validate()?;
        self.optim.validate()?;
        self.model_config()?;
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = &o.preset {
            self.preset = v.clone();
        }
        if let Some(v) = &o.name {
            self.name = Some(v.clone());
        }
        if let Some(kind) = &o.strategy {
            self.strategy = strategy_from_kind(kind)?;
        }
        self.apply_strategy_fields(o)?;
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = &o.seeds {
            self.seeds = v.clone();
        }
        if let Some(v) = o.batch_size {
            self.batch_size = v;
        }
        if let Some(v) = o.lr {
            self.optim.base_lr = v;
        }
        if let Some(v) = o.weight_decay {
            self.optim.weight_decay = v;
        }
        if o.task.is_some() || o.n_examples.is_some() || o.data_seed.is_some() {
            let mut synth = match &self.dataset {
                DatasetSource::Synthetic(cfg) => cfg.clone(),
                DatasetSource::Tsv(_) => match o.task {
                    Some(kind) => SynthConfig::new(kind, 400, 0),
                    None => return Err(Error::Usage("--n-examples/--data-seed need a synthetic dataset".into())),
                },
            };
            if let Some(kind) = o.task {
                synth.kind = kind;
            }
            if let Some(n) = o.n_examples {
                synth.n_examples = n;
            }
            if let Some(s) = o.data_seed {
                synth.seed = s;
            }
            self.dataset = DatasetSource::Synthetic(synth);
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if o.no_checkpoints {
            self.checkpoints = false;
        }
        if o.epoch_checkpoints {
            self.epoch_checkpoints = true;
        }
        self.validate()
    }

    fn apply_strategy_fields(&mut self, o: &Overrides) -> Result<()> {
        let reject = |flag: &str, spec: &StrategySpec| {
            Err(Error::Usage(format!("{flag} does not apply to strategy {}", spec.kind_name())))
        };
        match &mut self.strategy {
            StrategySpec::Learner {
                rank,
                priming_epochs,
                init,
            } => {
                if let Some(v) = o.rank {
                    *rank = v;
                }
                if let Some(v) = o.priming {
                    *priming_epochs = v;
                }
                if let Some(v) = o.learner_init {
                    *init = v;
                }
            }
            spec => {
                if o.rank.is_some() {
                    return reject("--rank", spec);
                }
                if o.priming.is_some() {
                    return reject("--priming", spec);
                }
                if o.learner_init.is_some() {
                    return reject("--learner-init", spec);
                }
            }
        }
        match &mut self.strategy {
            StrategySpec::AdapterSequential { hidden } => {
                if let Some(v) = o.hidden {
                    *hidden = v;
                }
                if o.scale.is_some() {
                    return reject("--scale", &self.strategy);
                }
            }
            StrategySpec::AdapterParallel { hidden, scale } => {
                if let Some(v) = o.hidden {
                    *hidden = v;
                }
                if let Some(v) = o.scale {
                    *scale = v;
                }
            }
            spec => {
                if o.hidden.is_some() {
                    return reject("--hidden", spec);
                }
                if o.scale.is_some() {
                    return reject("--scale", spec);
                }
            }
        }
        Ok(())
    }
}

/// Builds a strategy with default hyperparameters from its kind name.
/// Hyphens and underscores are interchangeable.
pub fn strategy_from_kind(kind: &str) -> Result<StrategySpec> {
    match kind.replace('-', "_").as_str() {
        "full" | "baseline" => Ok(StrategySpec::Full),
        "bitfit" => Ok(StrategySpec::Bitfit),
        "freeze_ffns" => Ok(StrategySpec::FreezeFfns),
        "adapter" | "adapter_sequential" => Ok(StrategySpec::AdapterSequential {
            hidden: DEFAULT_ADAPTER_HIDDEN,
        }),
        "parallel_adapter" | "adapter_parallel" => Ok(StrategySpec::AdapterParallel {
            hidden: DEFAULT_ADAPTER_HIDDEN,
            scale: DEFAULT_PARALLEL_SCALE,
        }),
        "learner" => Ok(StrategySpec::learner(DEFAULT_RANK, 0)),
        other => Err(Error::Usage(format!("unknown strategy {other:?}"))),
    }
}

/// Command-line values that replace config-file values when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub strategy: Option<String>,
    pub rank: Option<usize>,
    pub priming: Option<usize>,
    pub learner_init: Option<LearnerInit>,
    pub hidden: Option<usize>,
    pub scale: Option<f64>,
    pub epochs: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub task: Option<SynthKind>,
    pub n_examples: Option<usize>,
    pub data_seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub no_checkpoints: bool,
    pub epoch_checkpoints: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.seeds.len(), 5);
        assert_eq!(cfg.batch_size, 16);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            preset = "micro"
            epochs = 3
            seeds = [7, 8]
            [strategy]
            kind = "learner"
            rank = 4
            priming_epochs = 1
            [optim]
            base_lr = 0.001
            [dataset]
            source = "synthetic"
            kind = "keyword"
            n_examples = 50
            seed = 3
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.strategy, StrategySpec::learner(4, 1));
        assert_eq!(cfg.optim.base_lr, 1e-3);
        assert_eq!(cfg.optim.beta2, 0.999);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("epoch = 3"), Err(Error::Usage(_))));
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = RunConfig::from_toml("epochs = 3\n[strategy]\nkind = \"learner\"\nrank = 4\npriming_epochs = 0\n").unwrap();
        cfg.apply_overrides(&Overrides {
            epochs: Some(2),
            priming: Some(1),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(cfg.epochs, 2);
        assert_eq!(cfg.strategy, StrategySpec::learner(4, 1));
    }

    #[test]
    fn strategy_flags_must_fit_kind() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_overrides(&Overrides {
            strategy: Some("bitfit".into()),
            rank: Some(4),
            ..Overrides::default()
        });
        assert!(matches!(err, Err(Error::Usage(_))));
        let mut cfg = RunConfig::default();
        let err = cfg.apply_overrides(&Overrides {
            strategy: Some("learner".into()),
            rank: Some(0),
            ..Overrides::default()
        });
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn invalid_runs_rejected() {
        let cfg = RunConfig {
            epochs: 0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            seeds: vec![],
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
