//! Multi-method comparison over a shared dataset and seed list.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::config::RunConfig;
use super::run::{train_on, write_csv, RunRecord};

#[derive(Clone, Debug)]
pub struct MethodSummary {
    pub label: String,
    pub seeds: Vec<u64>,
    /// Final loss per seed, aligned with `seeds`.
    pub final_losses: Vec<f64>,
    pub mean_final_loss: f64,
    /// Mean over seeds of each epoch's mean step loss.
    pub epoch_curve: Vec<f64>,
    /// Mean over seeds of each step's loss.
    pub step_curve: Vec<f64>,
    /// 1 for the lowest mean final loss.
    pub rank: usize,
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    pub methods: Vec<MethodSummary>,
}

impl CompareReport {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.label == label)
    }

    /// Seeds on which `a`'s final loss is at most `b`'s.
    pub fn wins(&self, a: &str, b: &str) -> Option<usize> {
        let (a, b) = (self.method(a)?, self.method(b)?);
        Some(a.final_losses.iter().zip(&b.final_losses).filter(|(x, y)| x <= y).count())
    }

    pub fn table(&self) -> String {
        let width = self.methods.iter().map(|m| m.label.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:>4}  {:<width$}  {:>12}  per-seed\n", "rank", "method", "mean_final");
        let mut ranked: Vec<&MethodSummary> = self.methods.iter().collect();
        ranked.sort_by_key(|m| m.rank);
        for m in ranked {
            let seeds: Vec<String> = m.final_losses.iter().map(|l| format!("{l:.4}")).collect();
            out.push_str(&format!(
                "{:>4}  {:<width$}  {:>12.6}  {}\n",
                m.rank,
                m.label,
                m.mean_final_loss,
                seeds.join(" ")
            ));
        }
        out
    }
}

fn mean_curves(curves: &[Vec<f64>]) -> Vec<f64> {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64)
        .collect()
}

fn summarize(label: String, records: &[RunRecord]) -> MethodSummary {
    let final_losses: Vec<f64> = records.iter().map(RunRecord::final_loss).collect();
    let epoch_curves: Vec<Vec<f64>> = records.iter().map(RunRecord::epoch_losses).collect();
    let step_curves: Vec<Vec<f64>> = records
        .iter()
        .map(|r| r.steps.iter().map(|s| s.loss).collect())
        .collect();
    MethodSummary {
        label,
        seeds: records.iter().map(|r| r.seed).collect(),
        mean_final_loss: final_losses.iter().sum::<f64>() / final_losses.len() as f64,
        final_losses,
        epoch_curve: mean_curves(&epoch_curves),
        step_curve: mean_curves(&step_curves),
        rank: 0,
    }
}

/// Trains each config into `out_dir/<label>` and writes the merged curves
/// (`compare_epoch.csv`, `compare_step.csv`), per-seed final losses
/// (`final_losses.csv`), the rank table (`ranking.csv`) and, if `plot`, a
/// gnuplot script over the epoch curves.
pub fn compare(configs: &[RunConfig], out_dir: &Path, plot: bool) -> Result<CompareReport> {
    if configs.len() < 2 {
        return Err(Error::Usage("compare needs at least 2 configs".into()));
    }
    let first = &configs[0];
    for c in &configs[1..] {
        if c.dataset != first.dataset {
            return Err(Error::Usage(format!(
                "config {:?} uses a different dataset from {:?}",
                c.label(),
                first.label()
            )));
        }
        if c.seeds != first.seeds {
            return Err(Error::Usage(format!(
                "config {:?} uses different seeds from {:?}",
                c.label(),
                first.label()
            )));
        }
    }
    for c in configs {
        c.validate()?;
    }

    let mut labels: Vec<String> = Vec::new();
    let mut used = BTreeSet::new();
    for c in configs {
        let base = c.label();
        let mut label = base.clone();
        let mut k = 2;
        while !used.insert(label.clone()) {
            label = format!("{base}_{k}");
            k += 1;
        }
        labels.push(label);
    }

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let data = first.dataset.load(&first.model_config()?)?;
    let mut methods = Vec::new();
    for (c, label) in configs.iter().zip(&labels) {
        let out = train_on(c, &data, &out_dir.join(label))?;
        methods.push(summarize(label.clone(), &out.records));
    }

    let mut order: Vec<usize> = (0..methods.len()).collect();
    order.sort_by(|&a, &b| methods[a].mean_final_loss.total_cmp(&methods[b].mean_final_loss));
    for (rank, &i) in order.iter().enumerate() {
        methods[i].rank = rank + 1;
    }
    let report = CompareReport { methods };
    write_report(&report, out_dir, plot)?;
    Ok(report)
}

fn write_report(report: &CompareReport, dir: &Path, plot: bool) -> Result<()> {
    let m = &report.methods;
    write_csv(
        &dir.join("compare_epoch.csv"),
        &["method", "epoch", "mean_loss"],
        m.iter().flat_map(|s| {
            s.epoch_curve
                .iter()
                .enumerate()
                .map(|(e, l)| vec![s.label.clone(), e.to_string(), l.to_string()])
                .collect::<Vec<_>>()
        }),
    )?;
    write_csv(
        &dir.join("compare_step.csv"),
        &["method", "step", "mean_loss"],
        m.iter().flat_map(|s| {
            s.step_curve
                .iter()
                .enumerate()
                .map(|(i, l)| vec![s.label.clone(), i.to_string(), l.to_string()])
                .collect::<Vec<_>>()
        }),
    )?;
    write_csv(
        &dir.join("final_losses.csv"),
        &["method", "seed", "final_loss"],
        m.iter().flat_map(|s| {
            s.seeds
                .iter()
                .zip(&s.final_losses)
                .map(|(seed, l)| vec![s.label.clone(), seed.to_string(), l.to_string()])
                .collect::<Vec<_>>()
        }),
    )?;
    let mut ranked: Vec<&MethodSummary> = m.iter().collect();
    ranked.sort_by_key(|s| s.rank);
    write_csv(
        &dir.join("ranking.csv"),
        &["rank", "method", "mean_final_loss"],
        ranked
            .iter()
            .map(|s| vec![s.rank.to_string(), s.label.clone(), s.mean_final_loss.to_string()]),
    )?;
    if plot {
        let mut script = String::from(
            "set datafile separator ','\nset key top right\nset xlabel 'epoch'\nset ylabel 'mean training loss'\nset terminal pngcairo size 900,600\nset output 'compare.png'\nplot ",
        );
        let series: Vec<String> = m
            .iter()
            .map(|s| {
                format!(
                    "'compare_epoch.csv' every ::1 using 2:(stringcolumn(1) eq '{0}' ? $3 : 1/0) with linespoints title '{0}'",
                    s.label
                )
            })
            .collect();
        script.push_str(&series.join(", \\\n     "));
        script.push('\n');
        let path = dir.join("compare.gp");
        fs::write(&path, script).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
