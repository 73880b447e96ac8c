//! Parameter bookkeeping per strategy and training phase, and reconciliation
//! against published DistilBERT fine-tuning counts.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::param::ParamGroup;
use crate::scalar::Scalar;
use crate::schedule::{on_epoch_start, PhasePlan};
use crate::strategy::{apply, StrategySpec};

/// Trained count over a contiguous range of epochs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseCount {
    pub epochs: Range<usize>,
    pub trained: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GroupCount {
    pub total: usize,
    pub trained: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub total_params: usize,
    pub trained_by_phase: Vec<PhaseCount>,
    /// Breakdown under the model's live mask.
    pub groups: BTreeMap<ParamGroup, GroupCount>,
}

impl ParamReport {
    pub fn trained_first_phase(&self) -> usize {
        self.trained_by_phase.first().map_or(0, |p| p.trained)
    }

    pub fn trained_last_phase(&self) -> usize {
        self.trained_by_phase.last().map_or(0, |p| p.trained)
    }

    pub fn live_trained(&self) -> usize {
        self.groups.values().map(|g| g.trained).sum()
    }
}

/// Counts a configured model. Phase counts come from replaying the model's
/// schedule over `total_epochs` on a copy; the group breakdown reflects the
/// live mask.
pub fn count<T: Scalar>(model: &Model<T>, total_epochs: usize) -> Result<ParamReport> {
    let mut groups: BTreeMap<ParamGroup, GroupCount> = BTreeMap::new();
    for (_, p) in model.params().iter() {
        let g = groups.entry(p.group).or_default();
        g.total += p.numel();
        if p.trainable {
            g.trained += p.numel();
        }
    }

    let total_epochs = total_epochs.max(1);
    let mut replay = model.clone();
    let plan = PhasePlan::for_model(&replay, total_epochs);
    let mut phases: Vec<PhaseCount> = Vec::new();
    for epoch in 0..total_epochs {
        on_epoch_start(epoch, &plan, &mut replay, None)?;
        let trained = replay.params().trained_count();
        match phases.last_mut() {
            Some(last) if last.trained == trained => last.epochs.end = epoch + 1,
            _ => phases.push(PhaseCount {
                epochs: epoch..epoch + 1,
                trained,
            }),
        }
    }

    Ok(ParamReport {
        total_params: model.total_param_count(),
        trained_by_phase: phases,
        groups,
    })
}

/// Closed form for the parameters a rank-`rank` learner adds at every
/// attention and FFN linear: `Σ rank · (d + h)`.
pub fn learner_size_formula(config: &ModelConfig, rank: usize) -> usize {
    let d = config.d_model;
    let f = config.d_ffn;
    let per_layer = 4 * rank * (d + d) + rank * (d + f) + rank * (f + d);
    config.num_layers * per_layer
}

/// Counts `spec` applied to a shape-only model of `config`.
pub fn count_strategy(config: &ModelConfig, spec: &StrategySpec, total_epochs: usize) -> Result<ParamReport> {
    let mut model = Model::<f64>::describe(config.clone())?;
    apply(spec, &mut model, 0)?;
    count(&model, total_epochs)
}

/// One published row: totals and trained counts in millions.
#[derive(Clone, Debug)]
pub struct PublishedCount {
    pub method: &'static str,
    pub published_total_m: f64,
    pub published_trained_m: f64,
    /// `None` for rows that are echoed for reference only.
    pub spec: Option<StrategySpec>,
    pub tolerance: f64,
}

/// Published counts for DistilBERT on CoLA (millions of parameters).
pub fn published_counts() -> Vec<PublishedCount> {
    vec![
        PublishedCount {
            method: "Baseline",
            published_total_m: 66.95,
            published_trained_m: 66.95,
            spec: Some(StrategySpec::Full),
            tolerance: 0.015,
        },
        PublishedCount {
            method: "FAR10",
            published_total_m: 66.95,
            published_trained_m: 41.45,
            spec: None,
            tolerance: 0.0,
        },
        PublishedCount {
            method: "Adapter",
            published_total_m: 71.68,
            published_trained_m: 5.34,
            spec: Some(StrategySpec::AdapterSequential { hidden: 256 }),
            tolerance: 0.015,
        },
        PublishedCount {
            method: "Parallel Adapter",
            published_total_m: 71.68,
            published_trained_m: 5.33,
            spec: Some(StrategySpec::AdapterParallel { hidden: 512, scale: 4.0 }),
            tolerance: 0.015,
        },
        PublishedCount {
            method: "Freeze FFNs",
            published_total_m: 66.95,
            published_trained_m: 14.80,
            spec: Some(StrategySpec::FreezeFfns),
            tolerance: 0.01,
        },
        PublishedCount {
            method: "BitFit",
            published_total_m: 66.95,
            published_trained_m: 0.64,
            spec: Some(StrategySpec::Bitfit),
            tolerance: 0.02,
        },
        PublishedCount {
            method: "Learner64 (p=2)",
            published_total_m: 72.26,
            published_trained_m: 5.96,
            spec: Some(StrategySpec::learner(64, 2)),
            tolerance: 0.01,
        },
    ]
}

/// Tolerance applied to every total-parameter comparison.
pub const TOTAL_TOLERANCE: f64 = 0.015;
/// Learner trained count during priming, "around 20 million".
pub const PRIMING_TRAINED_M: f64 = 20.1;
pub const PRIMING_TOLERANCE: f64 = 0.02;
/// Exact learner size for rank 64 at DistilBERT dimensions.
pub const LEARNER64_DELTA: usize = 5_308_416;
/// Epochs used when replaying schedules for the table.
pub const PUBLISHED_EPOCHS: usize = 5;

#[derive(Clone, Debug)]
pub struct ReconRow {
    pub method: &'static str,
    pub published_total_m: f64,
    pub published_trained_m: f64,
    pub computed: Option<ParamReport>,
    pub total_deviation: Option<f64>,
    pub trained_deviation: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl ReconRow {
    pub fn reference_only(&self) -> bool {
        self.computed.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct ReconCheck {
    pub name: String,
    pub computed: f64,
    pub expected: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct Reconciliation {
    pub rows: Vec<ReconRow>,
    pub checks: Vec<ReconCheck>,
}

impl Reconciliation {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass) && self.checks.iter().all(|c| c.pass)
    }
}

pub fn relative_deviation(computed: f64, expected: f64) -> f64 {
    ((computed - expected) / expected).abs()
}

/// Counts every published method at DistilBERT dimensions and compares the
/// trained (post-priming for learners) and total counts with the published values.
pub fn reconcile_published() -> Result<Reconciliation> {
    let config = ModelConfig::distilbert_dims();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut baseline_total = None;

    for entry in published_counts() {
        let Some(spec) = &entry.spec else {
            rows.push(ReconRow {
                method: entry.method,
                published_total_m: entry.published_total_m,
                published_trained_m: entry.published_trained_m,
                computed: None,
                total_deviation: None,
                trained_deviation: None,
                tolerance: entry.tolerance,
                pass: true,
            });
            continue;
        };
        let report = count_strategy(&config, spec, PUBLISHED_EPOCHS)?;
        let total_dev = relative_deviation(report.total_params as f64 / 1e6, entry.published_total_m);
        let trained_dev = relative_deviation(report.trained_last_phase() as f64 / 1e6, entry.published_trained_m);
        let pass = total_dev <= TOTAL_TOLERANCE && trained_dev <= entry.tolerance;

        if matches!(spec, StrategySpec::Full) {
            baseline_total = Some(report.total_params);
        }
        if let StrategySpec::Learner { rank, .. } = spec {
            let phase0 = report.trained_first_phase() as f64 / 1e6;
            let dev = relative_deviation(phase0, PRIMING_TRAINED_M);
            checks.push(ReconCheck {
                name: format!("{} priming-phase trained", entry.method),
                computed: phase0,
                expected: PRIMING_TRAINED_M,
                deviation: dev,
                tolerance: PRIMING_TOLERANCE,
                pass: dev <= PRIMING_TOLERANCE,
            });
            if let Some(base) = baseline_total {
                let delta = report.total_params - base;
                let formula = learner_size_formula(&config, *rank);
                checks.push(ReconCheck {
                    name: format!("{} added parameters", entry.method),
                    computed: delta as f64,
                    expected: LEARNER64_DELTA as f64,
                    deviation: relative_deviation(delta as f64, LEARNER64_DELTA as f64),
                    tolerance: 0.0,
                    pass: delta == LEARNER64_DELTA && formula == delta,
                });
            }
        }

        rows.push(ReconRow {
            method: entry.method,
            published_total_m: entry.published_total_m,
            published_trained_m: entry.published_trained_m,
            computed: Some(report),
            total_deviation: Some(total_dev),
            trained_deviation: Some(trained_dev),
            tolerance: entry.tolerance,
            pass,
        });
    }
    Ok(Reconciliation { rows, checks })
}
