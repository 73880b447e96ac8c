//! Datasets: seeded synthetic tasks, GLUE-style TSV ingestion with hashing
//! tokenization, and epoch batching.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TaskKind, TokenBatch, Targets, CLS_TOKEN, SEP_TOKEN};

/// First id available to ordinary words; 0..3 are PAD, CLS, SEP.
pub const FIRST_WORD_TOKEN: usize = 3;
/// Trigger token of the synthetic classification tasks.
pub const TRIGGER_TOKEN: usize = FIRST_WORD_TOKEN;
pub const DEFAULT_BATCH_SIZE: usize = 16;
/// Content tokens per synthetic example (CLS excluded).
pub const DEFAULT_SYNTH_LEN: usize = 16;
/// Parity task trigger counts are uniform over `0..=PARITY_MAX_TRIGGERS`.
pub const PARITY_MAX_TRIGGERS: usize = 11;
/// Keyword task positives carry `1..=KEYWORD_MAX_TRIGGERS` triggers.
pub const KEYWORD_MAX_TRIGGERS: usize = 3;

const SPLIT_STREAM: u64 = 4;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetTask {
    Classification { num_labels: usize },
    Regression,
}

impl DatasetTask {
    pub fn model_task(self) -> (TaskKind, usize) {
        match self {
            DatasetTask::Classification { num_labels } => (TaskKind::Classification, num_labels),
            DatasetTask::Regression => (TaskKind::Regression, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    Value(f64),
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Class(c) => c as f64,
            Label::Value(v) => v,
        }
    }
}

/// Token ids start with CLS; sentence pairs are joined by SEP.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub task: DatasetTask,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Dataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tokens: TokenBatch,
    pub targets: Targets,
    /// Positions of the examples within the dataset.
    pub indices: Vec<usize>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, task: DatasetTask, split: Split) -> Result<Self> {
        let ds = Self { examples, task, split };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Labels in range for classification, finite for regression.
    pub fn validate(&self) -> Result<()> {
        for (i, ex) in self.examples.iter().enumerate() {
            match (self.task, ex.label) {
                (DatasetTask::Classification { num_labels }, Label::Class(c)) if c < num_labels => {}
                (DatasetTask::Regression, Label::Value(v)) if v.is_finite() => {}
                _ => {
                    return Err(Error::Input(format!(
                        "example {i}: label {:?} invalid for {:?}",
                        ex.label, self.task
                    )))
                }
            }
            if ex.tokens.is_empty() {
                return Err(Error::Input(format!("example {i}: empty token sequence")));
            }
        }
        Ok(())
    }

    pub fn max_token(&self) -> usize {
        self.examples
            .iter()
            .flat_map(|e| e.tokens.iter().copied())
            .max()
            .unwrap_or(0)
    }

    pub fn max_len(&self) -> usize {
        self.examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.label.as_f64()).collect()
    }

    /// Seeded shuffle of all examples for `epoch`, cut into batches of
    /// `batch_size` (the last one may be short).
    pub fn epoch_batches(&self, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(SHUFFLE_STREAM);
        order.shuffle(&mut rng);
        self.batches_in_order(&order, batch_size)
    }

    /// Batches in storage order.
    pub fn sequential_batches(&self, batch_size: usize) -> Result<Vec<Batch>> {
        let order: Vec<usize> = (0..self.len()).collect();
        self.batches_in_order(&order, batch_size)
    }

    fn batches_in_order(&self, order: &[usize], batch_size: usize) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(Error::Usage("batch size must be at least 1".into()));
        }
        Ok(order
            .chunks(batch_size)
            .map(|idx| {
                let seqs: Vec<&[usize]> = idx.iter().map(|&i| self.examples[i].tokens.as_slice()).collect();
                let targets = match self.task {
                    DatasetTask::Classification { .. } => Targets::Classes(
                        idx.iter()
                            .map(|&i| match self.examples[i].label {
                                Label::Class(c) => c,
                                Label::Value(v) => v as usize,
                            })
                            .collect(),
                    ),
                    DatasetTask::Regression => {
                        Targets::Values(idx.iter().map(|&i| self.examples[i].label.as_f64()).collect())
                    }
                };
                Batch {
                    tokens: TokenBatch::from_sequences(&seqs),
                    targets,
                    indices: idx.to_vec(),
                }
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Label 1 iff the trigger token occurs.
    Keyword,
    /// Label is the parity of the trigger count.
    Parity,
    /// Target is the mean of fixed random per-token weights.
    LinearRegression,
}

impl SynthKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::Keyword => "keyword",
            SynthKind::Parity => "parity",
            SynthKind::LinearRegression => "linear_regression",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keyword" => Ok(SynthKind::Keyword),
            "parity" => Ok(SynthKind::Parity),
            "linear_regression" => Ok(SynthKind::LinearRegression),
            other => Err(Error::Usage(format!("unknown synthetic task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n_examples: usize,
    pub seed: u64,
    #[serde(default = "default_synth_len")]
    pub seq_len: usize,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
}

fn default_synth_len() -> usize {
    DEFAULT_SYNTH_LEN
}

fn default_vocab() -> usize {
    64
}

impl SynthConfig {
    pub fn new(kind: SynthKind, n_examples: usize, seed: u64) -> Self {
        Self {
            kind,
            n_examples,
            seed,
            seq_len: DEFAULT_SYNTH_LEN,
            vocab_size: default_vocab(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_examples < 10 {
            return Err(Error::Usage("synthetic tasks need at least 10 examples".into()));
        }
        if self.vocab_size < FIRST_WORD_TOKEN + 2 {
            return Err(Error::Usage("vocabulary too small for synthetic tasks".into()));
        }
        let needed = match self.kind {
            SynthKind::Parity => PARITY_MAX_TRIGGERS,
            SynthKind::Keyword => KEYWORD_MAX_TRIGGERS,
            SynthKind::LinearRegression => 1,
        };
        if self.seq_len < needed {
            return Err(Error::Usage(format!(
                "{} needs sequences of at least {needed} tokens",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Synthetic task with default length and vocabulary, split 80/20.
pub fn synth_task(seed: u64, n_examples: usize, kind: SynthKind) -> Result<SplitDataset> {
    synth_task_with(&SynthConfig::new(kind, n_examples, seed))
}

pub fn synth_task_with(cfg: &SynthConfig) -> Result<SplitDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let filler = FIRST_WORD_TOKEN + 1..cfg.vocab_size;
    let weights: Vec<f64> = (0..cfg.vocab_size).map(|_| StandardNormal.sample(&mut rng)).collect();

    let mut examples = Vec::with_capacity(cfg.n_examples);
    for _ in 0..cfg.n_examples {
        let mut content: Vec<usize> = Vec::with_capacity(cfg.seq_len + 1);
        content.push(CLS_TOKEN);
        let label = match cfg.kind {
            SynthKind::Keyword | SynthKind::Parity => {
                let triggers = match cfg.kind {
                    SynthKind::Parity => rng.random_range(0..=PARITY_MAX_TRIGGERS),
                    _ if rng.random_bool(0.5) => rng.random_range(1..=KEYWORD_MAX_TRIGGERS),
                    _ => 0,
                };
                let mut body: Vec<usize> = (0..cfg.seq_len)
                    .map(|i| {
                        if i < triggers {
                            TRIGGER_TOKEN
                        } else {
                            rng.random_range(filler.clone())
                        }
                    })
                    .collect();
                body.shuffle(&mut rng);
                content.extend(body);
                let class = match cfg.kind {
                    SynthKind::Parity => triggers % 2,
                    _ => usize::from(triggers > 0),
                };
                Label::Class(class)
            }
            SynthKind::LinearRegression => {
                let body: Vec<usize> = (0..cfg.seq_len)
                    .map(|_| rng.random_range(FIRST_WORD_TOKEN..cfg.vocab_size))
                    .collect();
                let value = body.iter().map(|&t| weights[t]).sum::<f64>() / cfg.seq_len as f64;
                content.extend(body);
                Label::Value(value)
            }
        };
        examples.push(Example { tokens: content, label });
    }

    let task = match cfg.kind {
        SynthKind::LinearRegression => DatasetTask::Regression,
        _ => DatasetTask::Classification { num_labels: 2 },
    };
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    split_rng.set_stream(SPLIT_STREAM);
    examples.shuffle(&mut split_rng);
    let n_val = cfg.n_examples / 5;
    let validation = examples.split_off(cfg.n_examples - n_val);
    Ok(SplitDataset {
        train: Dataset::new(examples, task, Split::Train)?,
        validation: Dataset::new(validation, task, Split::Validation)?,
    })
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased whitespace-separated words, each mapped to
/// `3 + fnv1a(word) % (vocab - 3)`. A word `#<n>` with `3 <= n < vocab`
/// maps to id `n` verbatim.
pub fn tokenize(text: &str, vocab_size: usize) -> Vec<usize> {
    let span = vocab_size.saturating_sub(FIRST_WORD_TOKEN).max(1) as u64;
    text.split_whitespace()
        .map(|word| {
            if let Some(id) = word.strip_prefix('#').and_then(|n| n.parse::<usize>().ok()) {
                if (FIRST_WORD_TOKEN..vocab_size).contains(&id) {
                    return id;
                }
            }
            let lower = word.to_lowercase();
            FIRST_WORD_TOKEN + (fnv1a(lower.as_bytes()) % span) as usize
        })
        .collect()
}

/// Column layout of a TSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsvSchema {
    /// One column, or two for sentence pairs.
    pub sentence_columns: Vec<String>,
    pub label_column: String,
    pub task: DatasetTask,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl TsvSchema {
    fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.sentence_columns.len()) {
            return Err(Error::Usage("TSV schema needs one or two sentence columns".into()));
        }
        if self.vocab_size <= FIRST_WORD_TOKEN || self.max_seq_len < 2 {
            return Err(Error::Usage("TSV schema vocabulary or length too small".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// First malformed row aborts the load.
    #[default]
    Strict,
    /// Malformed rows are skipped and reported.
    Lenient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsvLoad {
    pub dataset: Dataset,
    pub skipped: Vec<SkippedRow>,
}

pub fn load_tsv(path: &Path, schema: &TsvSchema, strictness: Strictness, split: Split) -> Result<TsvLoad> {
    schema.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Data { line: 1, msg: e.to_string() })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column {name:?}", path.display())))
    };
    let sentence_cols = schema
        .sentence_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let label_col = column(&schema.label_column)?;

    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for record in reader.records() {
        let (line, parsed) = match record {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line() as usize);
                (line, parse_row(&rec, &sentence_cols, label_col, schema))
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                (line, Err(e.to_string()))
            }
        };
        match parsed {
            Ok(ex) => examples.push(ex),
            Err(msg) => match strictness {
                Strictness::Strict => return Err(Error::Data { line, msg }),
                Strictness::Lenient => skipped.push(SkippedRow { line, reason: msg }),
            },
        }
    }
    Ok(TsvLoad {
        dataset: Dataset::new(examples, schema.task, split)?,
        skipped,
    })
}

fn parse_row(
    rec: &csv::StringRecord,
    sentence_cols: &[usize],
    label_col: usize,
    schema: &TsvSchema,
) -> std::result::Result<Example, String> {
    let field = |i: usize| rec.get(i).ok_or_else(|| format!("row has {} fields, expected column {}", rec.len(), i + 1));
    let raw_label = field(label_col)?.trim();
    let label = match schema.task {
        DatasetTask::Classification { num_labels } => {
            let c: usize = raw_label
                .parse()
                .map_err(|_| format!("label {raw_label:?} is not a class id"))?;
            if c >= num_labels {
                return Err(format!("label {c} out of range for {num_labels} classes"));
            }
            Label::Class(c)
        }
        DatasetTask::Regression => {
            let v: f64 = raw_label
                .parse()
                .map_err(|_| format!("label {raw_label:?} is not a number"))?;
            if !v.is_finite() {
                return Err(format!("label {raw_label:?} is not finite"));
            }
            Label::Value(v)
        }
    };
    let mut tokens = vec![CLS_TOKEN];
    for (k, &col) in sentence_cols.iter().enumerate() {
        if k > 0 {
            tokens.push(SEP_TOKEN);
        }
        tokens.extend(tokenize(field(col)?, schema.vocab_size));
    }
    tokens.truncate(schema.max_seq_len);
    Ok(Example { tokens, label })
}

/// Writes `dataset` so that [`load_tsv`] with the same schema reproduces it.
/// Tokens are emitted as `#<id>` words.
pub fn write_tsv(path: &Path, dataset: &Dataset, schema: &TsvSchema) -> Result<()> {
    schema.validate()?;
    let mut out = String::new();
    out.push_str(&schema.sentence_columns.join("\t"));
    out.push('\t');
    out.push_str(&schema.label_column);
    out.push('\n');
    for (i, ex) in dataset.examples.iter().enumerate() {
        let body = ex.tokens.strip_prefix(&[CLS_TOKEN]).unwrap_or(&ex.tokens);
        let mut parts: Vec<&[usize]> = body.splitn(schema.sentence_columns.len(), |&t| t == SEP_TOKEN).collect();
        if parts.len() != schema.sentence_columns.len() {
            return Err(Error::Input(format!(
                "example {i} has {} segments, schema has {} sentence columns",
                parts.len(),
                schema.sentence_columns.len()
            )));
        }
        for (k, part) in parts.iter_mut().enumerate() {
            if k > 0 {
                out.push('\t');
            }
            let words: Vec<String> = part.iter().map(|t| format!("#{t}")).collect();
            out.push_str(&words.join(" "));
        }
        out.push('\t');
        match ex.label {
            Label::Class(c) => out.push_str(&c.to_string()),
            Label::Value(v) => out.push_str(&format!("{v:?}")),
        }
        out.push('\n');
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
