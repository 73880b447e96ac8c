//! Training, comparison, collapse and configuration through the library API.

use std::fs;
use std::path::Path;

use learnerlab::checkpoint;
use learnerlab::data::{SynthConfig, SynthKind};
use learnerlab::harness::run::{checkpoint_path, collapsed_checkpoint_path};
use learnerlab::harness::{collapse_cmd, compare, train, DatasetSource, Overrides, RunConfig};
use learnerlab::model::{Model, ModelConfig};
use learnerlab::strategy::{apply, StrategySpec};
use learnerlab::Error;

const LOSS_HEADER: &str = "seed,epoch,step,lr,loss,trained_param_count";

fn small(strategy: StrategySpec, out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        strategy,
        epochs: 2,
        seeds: vec![0, 1],
        dataset: DatasetSource::Synthetic(SynthConfig::new(SynthKind::Parity, 80, 3)),
        output_dir: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.optim.base_lr = 1e-3;
    cfg
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn full_fine_tuning_learns_keyword_task() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(StrategySpec::Full, dir.path());
    cfg.epochs = 5;
    cfg.seeds = vec![0];
    cfg.checkpoints = false;
    cfg.dataset = DatasetSource::Synthetic(SynthConfig::new(SynthKind::Keyword, 400, 0));
    let out = train(&cfg).unwrap();
    let acc = out.records[0].metric(4, "train", "accuracy").unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn train_writes_loss_csv_with_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&small(StrategySpec::learner(4, 1), dir.path())).unwrap();
    let loss_csv = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(loss_csv.lines().next().unwrap(), LOSS_HEADER);
    let steps: usize = out.records.iter().map(|r| r.steps.len()).sum();
    assert_eq!(loss_csv.lines().count() - 1, steps);
    for name in ["epoch_loss.csv", "metrics.csv", "phases.csv", "params.csv", "summary.txt"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    for r in &out.records {
        assert!(checkpoint_path(dir.path(), r.seed).exists());
        assert!(collapsed_checkpoint_path(dir.path(), r.seed).exists());
        assert!(r.collapse_deviation.unwrap() <= 1e-10);
        assert_eq!(r.transitions.len(), 1);
        assert_eq!(r.transitions[0].epoch, 1);
        assert!(r.transitions[0].new_trained < r.transitions[0].old_trained);
    }
}

#[test]
fn regression_run_reports_correlations() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(StrategySpec::Bitfit, dir.path());
    cfg.seeds = vec![0];
    cfg.dataset = DatasetSource::Synthetic(SynthConfig::new(SynthKind::LinearRegression, 60, 1));
    let out = train(&cfg).unwrap();
    let r = &out.records[0];
    assert!(r.metric(1, "validation", "pearson").is_some());
    assert!(r.metric(1, "validation", "spearman").is_some());
}

#[test]
fn tsv_sourced_run() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.tsv");
    let mut text = String::from("sentence\tlabel\n");
    for i in 0..40 {
        text.push_str(&format!("word{} other{}\t{}\n", i % 7, i % 3, i % 2));
    }
    fs::write(&train_path, text).unwrap();
    let toml = format!(
        r#"
strategy = {{ kind = "adapter_parallel", hidden = 4, scale = 4.0 }}
epochs = 1
seeds = [0]
output_dir = {out:?}
[dataset]
source = "tsv"
train = {train:?}
sentence_columns = ["sentence"]
label_column = "label"
task = {{ kind = "classification", num_labels = 2 }}
"#,
        out = dir.path().join("run"),
        train = train_path,
    );
    let cfg = RunConfig::from_toml(&toml).unwrap();
    let out = train(&cfg).unwrap();
    assert_eq!(out.records[0].steps.len(), 3);
}

#[test]
fn compare_of_identical_configs_gives_identical_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(StrategySpec::Bitfit, dir.path());
    let report = compare(&[cfg.clone(), cfg], dir.path(), true).unwrap();
    let (a, b) = (&report.methods[0], &report.methods[1]);
    assert_ne!(a.label, b.label);
    assert_eq!(a.epoch_curve, b.epoch_curve);
    assert_eq!(a.step_curve, b.step_curve);
    assert_eq!(a.final_losses, b.final_losses);
    for name in ["compare_epoch.csv", "compare_step.csv", "final_losses.csv", "ranking.csv", "compare.gp"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    assert_eq!(read_rows(&dir.path().join("compare_epoch.csv")).len(), 2 * 2);
    assert_eq!(read_rows(&dir.path().join("final_losses.csv")).len(), 2 * 2);
}

#[test]
fn compare_rejects_mismatched_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = small(StrategySpec::Full, dir.path());
    let mut b = small(StrategySpec::Bitfit, dir.path());
    b.dataset = DatasetSource::Synthetic(SynthConfig::new(SynthKind::Keyword, 80, 3));
    assert!(matches!(compare(&[a.clone(), b], dir.path(), false), Err(Error::Usage(_))));
    let mut c = small(StrategySpec::Bitfit, dir.path());
    c.seeds = vec![5];
    assert!(matches!(compare(&[a.clone(), c], dir.path(), false), Err(Error::Usage(_))));
    assert!(matches!(compare(&[a], dir.path(), false), Err(Error::Usage(_))));
}

#[test]
fn collapsing_untrained_learners_reproduces_baseline_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let base = Model::<f64>::build(ModelConfig::micro(), 9).unwrap();
    let mut wrapped = base.clone();
    apply(&StrategySpec::learner(8, 2), &mut wrapped, 9).unwrap();
    let input = dir.path().join("wrapped.ckpt");
    let output = dir.path().join("collapsed.ckpt");
    checkpoint::save(&wrapped, &input).unwrap();
    let report = collapse_cmd(&input, &output, 0).unwrap();
    assert!(report.passes());
    assert_eq!(report.params_after, base.total_param_count());
    assert_eq!(fs::read(&output).unwrap(), checkpoint::to_bytes(&base).unwrap());
}

#[test]
fn collapse_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain.ckpt");
    checkpoint::save(&Model::<f64>::build(ModelConfig::micro(), 0).unwrap(), &plain).unwrap();
    assert!(matches!(
        collapse_cmd(&plain, &dir.path().join("o.ckpt"), 0),
        Err(Error::Usage(_))
    ));

    let mut bytes = fs::read(&plain).unwrap();
    bytes[3] ^= 0xff;
    let corrupt = dir.path().join("corrupt.ckpt");
    fs::write(&corrupt, bytes).unwrap();
    match collapse_cmd(&corrupt, &dir.path().join("o.ckpt"), 0) {
        Err(e @ Error::Format { offset: 0, .. }) => assert!(e.to_string().contains("offset 0")),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn config_validation_and_overrides() {
    let mut cfg = RunConfig::default();
    assert_eq!(cfg.epochs, 5);
    assert_eq!(cfg.seeds.len(), 5);
    cfg.validate().unwrap();

    let mut bad = cfg.clone();
    bad.epochs = 0;
    assert!(matches!(bad.validate(), Err(Error::Usage(_))));
    let mut bad = cfg.clone();
    bad.seeds.clear();
    assert!(matches!(bad.validate(), Err(Error::Usage(_))));

    assert!(matches!(RunConfig::from_toml("epoch = 3"), Err(Error::Usage(_))));
    let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);

    cfg.apply_overrides(&Overrides {
        strategy: Some("learner".into()),
        rank: Some(16),
        priming: Some(1),
        lr: Some(5e-4),
        ..Overrides::default()
    })
    .unwrap();
    assert_eq!(cfg.strategy, StrategySpec::learner(16, 1));
    assert_eq!(cfg.optim.base_lr, 5e-4);
    let err = cfg.apply_overrides(&Overrides {
        hidden: Some(4),
        ..Overrides::default()
    });
    assert!(matches!(err, Err(Error::Usage(_))));
}

#[test]
fn exit_codes_by_error_class() {
    assert_eq!(Error::Usage(String::new()).exit_code(), 1);
    assert_eq!(Error::Data { line: 1, msg: String::new() }.exit_code(), 2);
    assert_eq!(Error::Tolerance(String::new()).exit_code(), 3);
}
