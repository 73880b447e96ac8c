//! `collapse` and `count-params`.

use std::fmt::Write as _;
use std::path::Path;

use crate::accounting::{count_strategy, reconcile_published, published_counts, Reconciliation};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::learner::collapse_all;
use crate::model::{Model, ModelConfig};
use crate::strategy::StrategySpec;

use super::run::{collapse_deviation, COLLAPSE_CHECK_BATCHES, COLLAPSE_TOLERANCE};

#[derive(Clone, Debug, PartialEq)]
pub struct CollapseReport {
    pub learners: usize,
    pub params_before: usize,
    pub params_after: usize,
    pub baseline_total: usize,
    pub max_relative_deviation: f64,
    pub batches: usize,
}

impl CollapseReport {
    pub fn passes(&self) -> bool {
        self.max_relative_deviation <= COLLAPSE_TOLERANCE && self.params_after == self.baseline_total
    }
}

/// Folds every learner of the checkpoint at `input` into its host weight and
/// writes a baseline-format checkpoint to `output`. The written file is kept
/// even when the equivalence check fails, which is reported as a tolerance
/// error.
pub fn collapse_cmd(input: &Path, output: &Path, seed: u64) -> Result<CollapseReport> {
    let model: Model<f64> = checkpoint::load(input)?;
    let learners = model.linears().filter(|l| l.learner.is_some()).count();
    if learners == 0 {
        return Err(Error::Usage(format!("{} has no learner sections", input.display())));
    }
    let collapsed = collapse_all(&model)?;
    checkpoint::save(&collapsed, output)?;
    let baseline_total = Model::<f64>::describe(model.config().clone())?.total_param_count();
    let report = CollapseReport {
        learners,
        params_before: model.total_param_count(),
        params_after: collapsed.total_param_count(),
        baseline_total,
        max_relative_deviation: collapse_deviation(&model, &collapsed, COLLAPSE_CHECK_BATCHES, seed)?,
        batches: COLLAPSE_CHECK_BATCHES,
    };
    if !report.passes() {
        return Err(Error::Tolerance(format!(
            "collapse deviation {:e} over {} batches (limit {COLLAPSE_TOLERANCE:e}), {} params vs baseline {}",
            report.max_relative_deviation, report.batches, report.params_after, report.baseline_total
        )));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountRow {
    pub method: String,
    pub total: usize,
    pub trained_phase0: usize,
    pub trained_phase1: usize,
    /// Relative deviation of the final-phase trained count from the
    /// published value, when one exists for this method and preset.
    pub deviation_vs_published: Option<f64>,
    pub tolerance: Option<f64>,
}

impl CountRow {
    pub fn passes(&self) -> bool {
        match (self.deviation_vs_published, self.tolerance) {
            (Some(d), Some(t)) => d <= t,
            _ => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CountTable {
    pub rows: Vec<CountRow>,
    pub reconciliation: Option<Reconciliation>,
}

impl CountTable {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(CountRow::passes) && self.reconciliation.as_ref().is_none_or(|r| r.all_pass())
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("method,total,trained_phase0,trained_phase1,deviation_vs_paper\n");
        for r in &self.rows {
            let dev = r.deviation_vs_published.map_or(String::new(), |d| d.to_string());
            let _ = writeln!(out, "{},{},{},{},{dev}", r.method, r.total, r.trained_phase0, r.trained_phase1);
        }
        out
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>14}  {:>14}  {:>10}",
            "method", "total", "trained_phase0", "trained_phase1", "deviation"
        );
        for r in &self.rows {
            let dev = match (r.deviation_vs_published, r.tolerance) {
                (Some(d), Some(t)) => format!("{:.2}%{}", d * 100.0, if d <= t { "" } else { " FAIL" }),
                _ => "-".into(),
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>12}  {:>14}  {:>14}  {:>10}",
                r.method, r.total, r.trained_phase0, r.trained_phase1, dev
            );
        }
        if let Some(rec) = &self.reconciliation {
            out.push_str("\npublished comparison (millions)\n");
            let _ = writeln!(
                out,
                "{:<18}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}  status",
                "method", "ref_T", "ours_T", "ref_tr", "ours_tr", "dev", "tol"
            );
            for row in &rec.rows {
                match &row.computed {
                    Some(c) => {
                        let _ = writeln!(
                            out,
                            "{:<18}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}  {:>7.2}%  {:>5.1}%  {}",
                            row.method,
                            row.published_total_m,
                            c.total_params as f64 / 1e6,
                            row.published_trained_m,
                            c.trained_last_phase() as f64 / 1e6,
                            row.trained_deviation.unwrap_or(0.0) * 100.0,
                            row.tolerance * 100.0,
                            if row.pass { "ok" } else { "FAIL" }
                        );
                    }
                    None => {
                        let _ = writeln!(
                            out,
                            "{:<18}  {:>8.2}  {:>8}  {:>8.2}  {:>8}  {:>8}  {:>6}  reference only",
                            row.method, row.published_total_m, "-", row.published_trained_m, "-", "-", "-"
                        );
                    }
                }
            }
            for c in &rec.checks {
                let _ = writeln!(
                    out,
                    "{}: {} vs {} ({:.2}%, tol {:.1}%) {}",
                    c.name,
                    c.computed,
                    c.expected,
                    c.deviation * 100.0,
                    c.tolerance * 100.0,
                    if c.pass { "ok" } else { "FAIL" }
                );
            }
        }
        out
    }
}

/// Counts `spec` on `preset`. At DistilBERT dimensions the row is compared
/// with the matching published value and the full published table is
/// reconciled as well.
pub fn count_params_cmd(preset: &str, spec: &StrategySpec, epochs: usize) -> Result<CountTable> {
    spec.validate()?;
    if epochs == 0 {
        return Err(Error::Usage("epochs must be at least 1".into()));
    }
    let config = ModelConfig::preset(preset)?;
    let report = count_strategy(&config, spec, epochs)?;
    let published = (config == ModelConfig::distilbert_dims())
        .then(|| published_counts().into_iter().find(|e| e.spec.as_ref() == Some(spec)))
        .flatten();
    let row = CountRow {
        method: spec.label(),
        total: report.total_params,
        trained_phase0: report.trained_first_phase(),
        trained_phase1: report.trained_last_phase(),
        deviation_vs_published: published
            .as_ref()
            .map(|e| crate::accounting::relative_deviation(report.trained_last_phase() as f64 / 1e6, e.published_trained_m)),
        tolerance: published.as_ref().map(|e| e.tolerance),
    };
    let reconciliation = if config == ModelConfig::distilbert_dims() {
        Some(reconcile_published()?)
    } else {
        None
    };
    Ok(CountTable {
        rows: vec![row],
        reconciliation,
    })
}
