//! The training loop and its on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::accounting::{count, ParamReport};
use crate::autodiff::Tape;
use crate::checkpoint;
use crate::data::{Batch, Dataset, DatasetTask, SplitDataset, FIRST_WORD_TOKEN};
use crate::error::{Error, Result};
use crate::learner::collapse_all;
use crate::metrics::{metric, MetricKind};
use crate::model::{Model, ModelConfig, TaskKind, TokenBatch, CLS_TOKEN};
use crate::optim::{lr_at, AdamW};
use crate::schedule::{on_epoch_start, PhasePlan, PhaseTransition};
use crate::strategy::apply;

use super::config::RunConfig;

/// Relative logit deviation allowed between a learner model and its collapse.
pub const COLLAPSE_TOLERANCE: f64 = 1e-10;
pub const COLLAPSE_CHECK_BATCHES: usize = 20;
const EVAL_BATCH_SIZE: usize = 64;
const PROBE_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub seed: u64,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub trained_param_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetric {
    pub seed: u64,
    pub epoch: usize,
    pub split: &'static str,
    /// A [`MetricKind`] name or `loss`.
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub seed: u64,
    pub label: String,
    pub steps: Vec<StepRecord>,
    pub metrics: Vec<EpochMetric>,
    pub transitions: Vec<PhaseTransition>,
    pub params: ParamReport,
    pub elapsed: Duration,
    pub collapse_deviation: Option<f64>,
}

impl RunRecord {
    /// Mean step loss per epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let epochs = self.steps.last().map_or(0, |s| s.epoch + 1);
        (0..epochs)
            .map(|e| {
                let losses: Vec<f64> = self.steps.iter().filter(|s| s.epoch == e).map(|s| s.loss).collect();
                losses.iter().sum::<f64>() / losses.len().max(1) as f64
            })
            .collect()
    }

    /// Mean step loss over the last epoch.
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses().last().copied().unwrap_or(f64::NAN)
    }

    pub fn metric(&self, epoch: usize, split: &str, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.epoch == epoch && m.split == split && m.metric == name)
            .map(|m| m.value)
    }
}

/// Points at which [`train_seed`] hands the model to an observer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainEvent {
    /// After the epoch's mask is applied, before its first step.
    EpochStart(usize),
    Finished,
}

fn check_fits(model: &ModelConfig, data: &SplitDataset) -> Result<()> {
    for ds in [&data.train, &data.validation] {
        if !ds.is_empty() && ds.max_token() >= model.vocab_size {
            return Err(Error::Input(format!(
                "token id {} outside vocabulary of {}",
                ds.max_token(),
                model.vocab_size
            )));
        }
        if ds.max_len() > model.max_seq_len {
            return Err(Error::Input(format!(
                "sequence length {} exceeds model maximum {}",
                ds.max_len(),
                model.max_seq_len
            )));
        }
    }
    if data.train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    Ok(())
}

/// Trains one seed. Deterministic in `(config, data, seed)`.
pub fn train_seed(config: &RunConfig, data: &SplitDataset, seed: u64) -> Result<(RunRecord, Model<f64>)> {
    train_seed_observed(config, data, seed, &mut |_, _| Ok(()))
}

pub fn train_seed_observed(
    config: &RunConfig,
    data: &SplitDataset,
    seed: u64,
    observer: &mut dyn FnMut(TrainEvent, &Model<f64>) -> Result<()>,
) -> Result<(RunRecord, Model<f64>)> {
    config.validate()?;
    let model_cfg = config.model_config()?;
    check_fits(&model_cfg, data)?;
    let started = Instant::now();

    let mut model = Model::<f64>::build(model_cfg, seed)?;
    apply(&config.strategy, &mut model, seed)?;
    let plan = PhasePlan::for_model(&model, config.epochs);
    let mut optimizer = AdamW::new(config.optim.clone())?;
    let steps_per_epoch = data.train.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;

    let mut steps = Vec::with_capacity(total_steps);
    let mut metrics = Vec::new();
    let mut transitions = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        if let Some(t) = on_epoch_start(epoch, &plan, &mut model, Some(&mut optimizer))? {
            transitions.push(t);
        }
        observer(TrainEvent::EpochStart(epoch), &model)?;
        for batch in data.train.epoch_batches(config.batch_size, seed, epoch)? {
            let lr = lr_at(step, total_steps, config.optim.base_lr);
            let mut tape = Tape::new();
            let logits = model.forward(&mut tape, &batch.tokens)?;
            let loss = model.loss(&mut tape, logits, &batch.targets)?;
            let loss_value = tape.value(loss).get(0, 0);
            if !loss_value.is_finite() {
                return Err(Error::Input(format!("non-finite loss at step {step}")));
            }
            tape.backward(loss, model.params_mut())?;
            optimizer.step(model.params_mut(), lr)?;
            steps.push(StepRecord {
                seed,
                epoch,
                step,
                lr,
                loss: loss_value,
                trained_param_count: model.params().trained_count(),
            });
            step += 1;
        }
        for (split, ds) in [("train", &data.train), ("validation", &data.validation)] {
            for (name, value) in evaluate(&model, ds)? {
                metrics.push(EpochMetric {
                    seed,
                    epoch,
                    split,
                    metric: name,
                    value,
                });
            }
        }
    }
    observer(TrainEvent::Finished, &model)?;

    let collapse_deviation = if model.has_learners() {
        let collapsed = collapse_all(&model)?;
        Some(collapse_deviation(&model, &collapsed, COLLAPSE_CHECK_BATCHES, seed)?)
    } else {
        None
    };
    let record = RunRecord {
        seed,
        label: config.label(),
        steps,
        metrics,
        transitions,
        params: count(&model, config.epochs)?,
        elapsed: started.elapsed(),
        collapse_deviation,
    };
    Ok((record, model))
}

/// Loss and task metrics over a whole split, in storage order. Metrics that
/// are undefined on this split (e.g. zero-variance correlations) are omitted.
pub fn evaluate(model: &Model<f64>, ds: &Dataset) -> Result<Vec<(String, f64)>> {
    if ds.len() < 2 {
        return Ok(Vec::new());
    }
    let mut predictions = Vec::with_capacity(ds.len());
    let mut loss_sum = 0.0;
    for Batch { tokens, targets, .. } in ds.sequential_batches(EVAL_BATCH_SIZE)? {
        let mut tape = Tape::new();
        let logits = model.forward(&mut tape, &tokens)?;
        let loss = model.loss(&mut tape, logits, &targets)?;
        loss_sum += tape.value(loss).get(0, 0) * tokens.batch as f64;
        let out = tape.value(logits);
        for r in 0..out.rows() {
            let row = out.row(r);
            predictions.push(match model.config().task_kind {
                TaskKind::Regression => row[0],
                TaskKind::Classification => {
                    let mut best = 0;
                    for (i, v) in row.iter().enumerate() {
                        if *v > row[best] {
                            best = i;
                        }
                    }
                    best as f64
                }
            });
        }
    }
    let labels = ds.labels();
    let kinds: &[MetricKind] = match ds.task {
        DatasetTask::Classification { num_labels: 2 } => &[MetricKind::Accuracy, MetricKind::Mcc, MetricKind::F1],
        DatasetTask::Classification { .. } => &[MetricKind::Accuracy],
        DatasetTask::Regression => &[MetricKind::Pearson, MetricKind::Spearman],
    };
    let mut out = vec![("loss".to_string(), loss_sum / ds.len() as f64)];
    for &kind in kinds {
        match metric(kind, &predictions, &labels) {
            Ok(v) => out.push((kind.as_str().to_string(), v.value)),
            Err(Error::Metric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Random probe batches for equivalence checks: CLS followed by word ids.
pub fn probe_batches(config: &ModelConfig, count: usize, seed: u64) -> Vec<TokenBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PROBE_STREAM);
    let len = config.max_seq_len.min(12);
    (0..count)
        .map(|_| {
            let seqs: Vec<Vec<usize>> = (0..4)
                .map(|_| {
                    let n = rng.random_range(1..=len);
                    let mut s = vec![CLS_TOKEN];
                    s.extend((1..n).map(|_| rng.random_range(FIRST_WORD_TOKEN..config.vocab_size)));
                    s
                })
                .collect();
            TokenBatch::from_sequences(&seqs)
        })
        .collect()
}

/// Max relative logit deviation between two models over seeded probes.
pub fn collapse_deviation(wrapped: &Model<f64>, collapsed: &Model<f64>, batches: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for batch in probe_batches(wrapped.config(), batches, seed) {
        let a = wrapped.logits(&batch)?;
        let b = collapsed.logits(&batch)?;
        worst = worst.max(a.relative_deviation(&b)?);
    }
    Ok(worst)
}

/// Everything a `train` invocation produced.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub records: Vec<RunRecord>,
    pub output_dir: PathBuf,
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed{seed}.ckpt"))
}

pub fn collapsed_checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed{seed}.collapsed.ckpt"))
}

pub fn epoch_checkpoint_path(dir: &Path, seed: u64, epoch: usize) -> PathBuf {
    dir.join(format!("seed{seed}.epoch{epoch}.ckpt"))
}

/// Trains every seed (in parallel) and writes `loss.csv`, `metrics.csv`,
/// `phases.csv`, `params.csv`, `summary.txt` and checkpoints into the
/// config's output directory. Learner runs fail with a tolerance error if
/// the collapsed model deviates by more than [`COLLAPSE_TOLERANCE`].
pub fn train(config: &RunConfig) -> Result<TrainOutput> {
    config.validate()?;
    let data = config.dataset.load(&config.model_config()?)?;
    train_on(config, &data, &config.output_dir)
}

pub(crate) fn train_on(config: &RunConfig, data: &SplitDataset, dir: &Path) -> Result<TrainOutput> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut observer = |event: TrainEvent, model: &Model<f64>| match event {
                TrainEvent::EpochStart(epoch) if config.epoch_checkpoints => {
                    checkpoint::save(model, &epoch_checkpoint_path(dir, seed, epoch))
                }
                _ => Ok(()),
            };
            let (record, model) = train_seed_observed(config, data, seed, &mut observer)?;
            if config.checkpoints {
                checkpoint::save(&model, &checkpoint_path(dir, seed))?;
                if model.has_learners() {
                    checkpoint::save(&collapse_all(&model)?, &collapsed_checkpoint_path(dir, seed))?;
                }
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    write_outputs(dir, config, &records)?;
    for r in &records {
        if let Some(dev) = r.collapse_deviation {
            if dev > COLLAPSE_TOLERANCE {
                return Err(Error::Tolerance(format!(
                    "seed {}: collapsed logits deviate by {dev:e} (limit {COLLAPSE_TOLERANCE:e})",
                    r.seed
                )));
            }
        }
    }
    Ok(TrainOutput {
        records,
        output_dir: dir.to_path_buf(),
    })
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(err) => Error::io(path, err),
        other => Error::Input(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_outputs(dir: &Path, config: &RunConfig, records: &[RunRecord]) -> Result<()> {
    write_csv(
        &dir.join("loss.csv"),
        &["seed", "epoch", "step", "lr", "loss", "trained_param_count"],
        records.iter().flat_map(|r| {
            r.steps.iter().map(|s| {
                vec![
                    s.seed.to_string(),
                    s.epoch.to_string(),
                    s.step.to_string(),
                    s.lr.to_string(),
                    s.loss.to_string(),
                    s.trained_param_count.to_string(),
                ]
            })
        }),
    )?;
    write_csv(
        &dir.join("epoch_loss.csv"),
        &["seed", "epoch", "mean_loss"],
        records.iter().flat_map(|r| {
            r.epoch_losses()
                .into_iter()
                .enumerate()
                .map(|(e, l)| vec![r.seed.to_string(), e.to_string(), l.to_string()])
                .collect::<Vec<_>>()
        }),
    )?;
    write_csv(
        &dir.join("metrics.csv"),
        &["seed", "epoch", "split", "metric", "value"],
        records.iter().flat_map(|r| {
            r.metrics.iter().map(|m| {
                vec![
                    m.seed.to_string(),
                    m.epoch.to_string(),
                    m.split.to_string(),
                    m.metric.clone(),
                    m.value.to_string(),
                ]
            })
        }),
    )?;
    write_csv(
        &dir.join("phases.csv"),
        &["seed", "epoch", "old_trained", "new_trained"],
        records.iter().flat_map(|r| {
            r.transitions.iter().map(|t| {
                vec![
                    r.seed.to_string(),
                    t.epoch.to_string(),
                    t.old_trained.to_string(),
                    t.new_trained.to_string(),
                ]
            })
        }),
    )?;
    if let Some(first) = records.first() {
        let p = &first.params;
        write_csv(
            &dir.join("params.csv"),
            &["method", "total", "trained_phase0", "trained_phase1"],
            [vec![
                config.label(),
                p.total_params.to_string(),
                p.trained_first_phase().to_string(),
                p.trained_last_phase().to_string(),
            ]],
        )?;
    }

    // Timing varies between runs, so it stays out of the CSVs.
    let mut summary = format!("method {}\n", config.label());
    for r in records {
        summary.push_str(&format!(
            "seed {} final_loss {} elapsed_s {:.3}",
            r.seed,
            r.final_loss(),
            r.elapsed.as_secs_f64()
        ));
        if let Some(dev) = r.collapse_deviation {
            summary.push_str(&format!(" collapse_deviation {dev:e}"));
        }
        summary.push('\n');
    }
    let path = dir.join("summary.txt");
    fs::write(&path, summary).map_err(|e| Error::io(&path, e))
}
