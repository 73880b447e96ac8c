//! Synthetic tasks against a bag-of-words linear oracle, and TSV ingestion.

use std::fs;

use learnerlab::data::{
    load_tsv, synth_task, tokenize, write_tsv, Dataset, DatasetTask, Label, Split, Strictness, SynthKind, TsvSchema,
};
use learnerlab::Error;

const VOCAB: usize = 64;
const PERCEPTRON_EPOCHS: usize = 200;

fn features(tokens: &[usize]) -> Vec<f64> {
    let mut f = vec![0.0; VOCAB + 1];
    for &t in tokens {
        f[t] += 1.0;
    }
    f[VOCAB] = 1.0;
    f
}

/// Averaged perceptron on token counts.
fn fit_linear(ds: &Dataset) -> Vec<f64> {
    let xs: Vec<Vec<f64>> = ds.examples.iter().map(|e| features(&e.tokens)).collect();
    let ys: Vec<f64> = ds.labels().iter().map(|&l| if l > 0.5 { 1.0 } else { -1.0 }).collect();
    let mut w = vec![0.0; VOCAB + 1];
    let mut avg = vec![0.0; VOCAB + 1];
    for _ in 0..PERCEPTRON_EPOCHS {
        let mut mistakes = 0;
        for (x, &y) in xs.iter().zip(&ys) {
            let score: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            if y * score <= 0.0 {
                mistakes += 1;
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += y * xi;
                }
            }
            for (a, wi) in avg.iter_mut().zip(&w) {
                *a += wi;
            }
        }
        if mistakes == 0 {
            return w;
        }
    }
    avg
}

fn accuracy(w: &[f64], ds: &Dataset) -> f64 {
    let correct = ds
        .examples
        .iter()
        .filter(|e| {
            let score: f64 = w.iter().zip(features(&e.tokens)).map(|(a, b)| a * b).sum();
            (score > 0.0) == (e.label.as_f64() > 0.5)
        })
        .count();
    correct as f64 / ds.len() as f64
}

#[test]
fn keyword_task_is_linearly_separable() {
    for seed in 0..5 {
        let data = synth_task(seed, 500, SynthKind::Keyword).unwrap();
        let w = fit_linear(&data.train);
        assert_eq!(accuracy(&w, &data.train), 1.0, "seed {seed}");
        assert_eq!(accuracy(&w, &data.validation), 1.0, "seed {seed}");
    }
}

#[test]
fn parity_task_defeats_linear_oracle() {
    for seed in 0..5 {
        let data = synth_task(seed, 1000, SynthKind::Parity).unwrap();
        let w = fit_linear(&data.train);
        let acc = accuracy(&w, &data.validation);
        assert!(acc <= 0.6, "seed {seed}: validation accuracy {acc}");
    }
}

#[test]
fn regression_targets_are_finite_and_varied() {
    let data = synth_task(3, 200, SynthKind::LinearRegression).unwrap();
    let ys = data.train.labels();
    assert!(ys.iter().all(|y| y.is_finite()));
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    assert!(ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() > 0.0);
}

#[test]
fn too_few_examples_rejected() {
    assert!(synth_task(0, 9, SynthKind::Parity).is_err());
}

fn schema(cols: &[&str]) -> TsvSchema {
    TsvSchema {
        sentence_columns: cols.iter().map(|s| s.to_string()).collect(),
        label_column: "label".into(),
        task: DatasetTask::Classification { num_labels: 2 },
        vocab_size: VOCAB,
        max_seq_len: 32,
    }
}

#[test]
fn three_row_file_gives_three_examples() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.tsv");
    fs::write(&path, "id\tsentence\tlabel\n0\tThe cat sat\t1\n1\ton the mat\t0\n2\tquietly\t1\n").unwrap();
    let load = load_tsv(&path, &schema(&["sentence"]), Strictness::Strict, Split::Train).unwrap();
    assert_eq!(load.dataset.len(), 3);
    assert!(load.skipped.is_empty());
    assert_eq!(load.dataset.examples[2].label, Label::Class(1));
    let first = &load.dataset.examples[0].tokens;
    assert_eq!(first[0], learnerlab::model::CLS_TOKEN);
    assert_eq!(&first[1..4], &tokenize("the cat sat", VOCAB)[..]);
}

#[test]
fn sentence_pairs_are_joined_by_separator() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.tsv");
    fs::write(&path, "a\tb\tlabel\nhello\tworld\t0\n").unwrap();
    let load = load_tsv(&path, &schema(&["a", "b"]), Strictness::Strict, Split::Train).unwrap();
    let tokens = &load.dataset.examples[0].tokens;
    assert_eq!(tokens.len(), 4);
    assert_eq!(tokens[2], learnerlab::model::SEP_TOKEN);
}

#[test]
fn bad_label_in_strict_mode_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tsv");
    fs::write(&path, "sentence\tlabel\ngood row\t1\nbad row\tmaybe\nfine\t0\n").unwrap();
    match load_tsv(&path, &schema(&["sentence"]), Strictness::Strict, Split::Train) {
        Err(Error::Data { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected data error, got {other:?}"),
    }
    let lenient = load_tsv(&path, &schema(&["sentence"]), Strictness::Lenient, Split::Train).unwrap();
    assert_eq!(lenient.dataset.len(), 2);
    assert_eq!(lenient.skipped.len(), 1);
    assert_eq!(lenient.skipped[0].line, 3);
}

#[test]
fn out_of_range_class_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("range.tsv");
    fs::write(&path, "sentence\tlabel\nrow\t2\n").unwrap();
    assert!(matches!(
        load_tsv(&path, &schema(&["sentence"]), Strictness::Strict, Split::Train),
        Err(Error::Data { line: 2, .. })
    ));
}

#[test]
fn missing_column_is_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cols.tsv");
    fs::write(&path, "text\tlabel\nrow\t1\n").unwrap();
    assert!(matches!(
        load_tsv(&path, &schema(&["sentence"]), Strictness::Strict, Split::Train),
        Err(Error::Schema(_))
    ));
}

#[test]
fn write_then_load_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [SynthKind::Keyword, SynthKind::LinearRegression] {
        let data = synth_task(7, 60, kind).unwrap();
        let mut s = schema(&["sentence"]);
        s.task = data.train.task;
        let path = dir.path().join(format!("{kind}.tsv"));
        write_tsv(&path, &data.train, &s).unwrap();
        let back = load_tsv(&path, &s, Strictness::Strict, Split::Train).unwrap();
        assert_eq!(back.dataset, data.train);
    }
}
