//! Micro transformer encoder: embeddings, post-layernorm encoder blocks and a
//! pooled two-layer classification head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, LAYERNORM_EPS};
use crate::error::{Error, Result};
use crate::learner::LearnerModule;
use crate::param::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::strategy::{Adapter, AdapterSlot, StrategySpec};
use crate::tensor::DenseMatrix;

/// Token id used for padding; padded key positions are masked out of attention.
pub const PAD_TOKEN: usize = 0;
/// Token id placed at position 0; its final hidden state feeds the classifier.
pub const CLS_TOKEN: usize = 1;
/// Separator between sentence pairs.
pub const SEP_TOKEN: usize = 2;

/// Std of the normal initializer used for every weight matrix.
pub const INIT_STD: f64 = 0.02;

/// Additive attention mask value for padded keys.
const MASK_VALUE: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub num_labels: usize,
    pub task_kind: TaskKind,
}

impl ModelConfig {
    /// Training preset: 2 layers, width 32, 2 heads, FFN 128, vocab 64.
    pub fn micro() -> Self {
        Self {
            num_layers: 2,
            d_model: 32,
            num_heads: 2,
            d_ffn: 128,
            vocab_size: 64,
            max_seq_len: 32,
            num_labels: 2,
            task_kind: TaskKind::Classification,
        }
    }

    /// DistilBERT-sized dimensions. Only ever used for parameter accounting.
    pub fn distilbert_dims() -> Self {
        Self {
            num_layers: 6,
            d_model: 768,
            num_heads: 12,
            d_ffn: 3072,
            vocab_size: 30522,
            max_seq_len: 512,
            num_labels: 2,
            task_kind: TaskKind::Classification,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "micro" => Ok(Self::micro()),
            "distilbert-dims" => Ok(Self::distilbert_dims()),
            other => Err(Error::Usage(format!(
                "unknown preset {other:?} (expected micro or distilbert-dims)"
            ))),
        }
    }

    /// Switches to a single-output regression head.
    pub fn with_task(mut self, task: TaskKind, num_labels: usize) -> Self {
        self.task_kind = task;
        self.num_labels = num_labels;
        self
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("d_ffn", self.d_ffn),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("num_labels", self.num_labels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.vocab_size <= SEP_TOKEN {
            return Err(Error::Config("vocab_size must exceed the 3 reserved tokens".into()));
        }
        match self.task_kind {
            TaskKind::Classification if self.num_labels < 2 => {
                Err(Error::Config("classification needs at least 2 labels".into()))
            }
            TaskKind::Regression if self.num_labels != 1 => {
                Err(Error::Config("regression uses exactly 1 output".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    AttnQ,
    AttnK,
    AttnV,
    AttnOut,
    FfnUp,
    FfnDown,
    ClassifierHidden,
    ClassifierOut,
}

impl SiteKind {
    pub const ALL: [SiteKind; 8] = [
        SiteKind::AttnQ,
        SiteKind::AttnK,
        SiteKind::AttnV,
        SiteKind::AttnOut,
        SiteKind::FfnUp,
        SiteKind::FfnDown,
        SiteKind::ClassifierHidden,
        SiteKind::ClassifierOut,
    ];

    pub fn is_mha(self) -> bool {
        matches!(self, SiteKind::AttnQ | SiteKind::AttnK | SiteKind::AttnV | SiteKind::AttnOut)
    }

    pub fn is_ffn(self) -> bool {
        matches!(self, SiteKind::FfnUp | SiteKind::FfnDown)
    }

    pub fn is_classifier(self) -> bool {
        matches!(self, SiteKind::ClassifierHidden | SiteKind::ClassifierOut)
    }

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    fn path(self) -> &'static str {
        match self {
            SiteKind::AttnQ => "attn.q",
            SiteKind::AttnK => "attn.k",
            SiteKind::AttnV => "attn.v",
            SiteKind::AttnOut => "attn.out",
            SiteKind::FfnUp => "ffn.up",
            SiteKind::FfnDown => "ffn.down",
            SiteKind::ClassifierHidden => "hidden",
            SiteKind::ClassifierOut => "out",
        }
    }

    fn groups(self) -> (ParamGroup, ParamGroup) {
        if self.is_mha() {
            (ParamGroup::MhaWeight, ParamGroup::MhaBias)
        } else if self.is_ffn() {
            (ParamGroup::FfnWeight, ParamGroup::FfnBias)
        } else {
            (ParamGroup::Classifier, ParamGroup::Classifier)
        }
    }
}

/// One weight-bias linear layer of the model. `in_dim` is d, `out_dim` is h;
/// the host weight is stored `out_dim × in_dim`.
///
/// Classifier sites carry `layer_index == num_layers`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinearSite {
    pub layer_index: usize,
    pub kind: SiteKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearSite {
    /// Parameter-name prefix, e.g. `layer.1.attn.q` or `classifier.out`.
    pub fn prefix(&self) -> String {
        if self.kind.is_classifier() {
            format!("classifier.{}", self.kind.path())
        } else {
            format!("layer.{}.{}", self.layer_index, self.kind.path())
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub site: LinearSite,
    pub weight: ParamId,
    pub bias: ParamId,
    pub learner: Option<LearnerModule>,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Debug)]
pub struct Block {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub attn_ln: LayerNormParams,
    pub ffn_up: Linear,
    pub ffn_down: Linear,
    pub ffn_ln: LayerNormParams,
    pub adapters: Vec<Adapter>,
}

impl Block {
    fn linears(&self) -> [&Linear; 6] {
        [&self.q, &self.k, &self.v, &self.out, &self.ffn_up, &self.ffn_down]
    }

    fn linears_mut(&mut self) -> [&mut Linear; 6] {
        [
            &mut self.q,
            &mut self.k,
            &mut self.v,
            &mut self.out,
            &mut self.ffn_up,
            &mut self.ffn_down,
        ]
    }

    fn adapter(&self, slot: AdapterSlot) -> Option<&Adapter> {
        self.adapters.iter().find(|a| a.slot == slot)
    }
}

/// Integer token matrix `[batch × seq]`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch: usize,
    pub seq: usize,
    pub ids: Vec<usize>,
}

impl TokenBatch {
    /// Right-pads ragged sequences with [`PAD_TOKEN`].
    pub fn from_sequences<S: AsRef<[usize]>>(seqs: &[S]) -> Self {
        let seq = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * seq);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD_TOKEN, seq - s.len()));
        }
        Self {
            batch: seqs.len(),
            seq,
            ids,
        }
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.seq..(b + 1) * self.seq]
    }

    fn has_padding(&self) -> bool {
        self.ids.contains(&PAD_TOKEN)
    }
}

/// Supervision for one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    pub(crate) params: ParamStore<T>,
    word_emb: ParamId,
    pos_emb: ParamId,
    emb_ln: LayerNormParams,
    pub(crate) blocks: Vec<Block>,
    pub(crate) head_hidden: Linear,
    pub(crate) head_out: Linear,
    pub(crate) strategy: Option<StrategySpec>,
    base_len: usize,
}

struct Init<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
    normal: Normal<f64>,
}

impl Init<'_> {
    fn normal<T: Scalar>(&mut self, rows: usize, cols: usize) -> DenseMatrix<T> {
        let rng = self.rng.as_deref_mut().expect("materialized init has an rng");
        let normal = self.normal;
        DenseMatrix::from_fn(rows, cols, |_, _| T::lit(normal.sample(rng)))
    }
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes a model: weights from seeded `normal(0, 0.02)`,
    /// biases and layernorm shifts zero, layernorm gains one.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::construct(config, Some(&mut rng))
    }

    /// Shape-only model for parameter accounting; cannot run forward.
    pub fn describe(config: ModelConfig) -> Result<Self> {
        Self::construct(config, None)
    }

    fn construct(config: ModelConfig, rng: Option<&mut ChaCha8Rng>) -> Result<Self> {
        config.validate()?;
        let materialized = rng.is_some();
        let mut init = Init {
            rng,
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        };
        let mut params = ParamStore::new(materialized);
        let d = config.d_model;

        let word_emb = params.register(
            "embeddings.word.weight",
            (config.vocab_size, d),
            ParamGroup::Embedding,
            || init.normal(config.vocab_size, d),
        )?;
        let pos_emb = params.register(
            "embeddings.position.weight",
            (config.max_seq_len, d),
            ParamGroup::Embedding,
            || init.normal(config.max_seq_len, d),
        )?;
        let emb_ln = register_layernorm(&mut params, "embeddings.ln", d)?;

        let mut blocks = Vec::with_capacity(config.num_layers);
        for layer in 0..config.num_layers {
            let mut lin = |kind: SiteKind, in_dim: usize, out_dim: usize| {
                let site = LinearSite {
                    layer_index: layer,
                    kind,
                    in_dim,
                    out_dim,
                };
                register_linear(&mut params, &mut init, site)
            };
            let q = lin(SiteKind::AttnQ, d, d)?;
            let k = lin(SiteKind::AttnK, d, d)?;
            let v = lin(SiteKind::AttnV, d, d)?;
            let out = lin(SiteKind::AttnOut, d, d)?;
            let attn_ln = register_layernorm(&mut params, &format!("layer.{layer}.attn_ln"), d)?;
            let ffn_up = register_linear(
                &mut params,
                &mut init,
                LinearSite {
                    layer_index: layer,
                    kind: SiteKind::FfnUp,
                    in_dim: d,
                    out_dim: config.d_ffn,
                },
            )?;
            let ffn_down = register_linear(
                &mut params,
                &mut init,
                LinearSite {
                    layer_index: layer,
                    kind: SiteKind::FfnDown,
                    in_dim: config.d_ffn,
                    out_dim: d,
                },
            )?;
            let ffn_ln = register_layernorm(&mut params, &format!("layer.{layer}.ffn_ln"), d)?;
            blocks.push(Block {
                q,
                k,
                v,
                out,
                attn_ln,
                ffn_up,
                ffn_down,
                ffn_ln,
                adapters: Vec::new(),
            });
        }

        let head_hidden = register_linear(
            &mut params,
            &mut init,
            LinearSite {
                layer_index: config.num_layers,
                kind: SiteKind::ClassifierHidden,
                in_dim: d,
                out_dim: d,
            },
        )?;
        let head_out = register_linear(
            &mut params,
            &mut init,
            LinearSite {
                layer_index: config.num_layers,
                kind: SiteKind::ClassifierOut,
                in_dim: d,
                out_dim: config.num_labels,
            },
        )?;
        let base_len = params.len();
        Ok(Self {
            config,
            params,
            word_emb,
            pos_emb,
            emb_ln,
            blocks,
            head_hidden,
            head_out,
            strategy: None,
            base_len,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn strategy(&self) -> Option<&StrategySpec> {
        self.strategy.as_ref()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Number of parameters that belong to the bare architecture (registered
    /// before any strategy injected modules).
    pub fn base_param_len(&self) -> usize {
        self.base_len
    }

    pub fn total_param_count(&self) -> usize {
        self.params.total_count()
    }

    pub fn has_learners(&self) -> bool {
        self.linears().any(|l| l.learner.is_some())
    }

    pub fn has_adapters(&self) -> bool {
        self.blocks.iter().any(|b| !b.adapters.is_empty())
    }

    /// Every linear layer, ordered by layer, then q, k, v, out, ffn_up,
    /// ffn_down; the two classifier linears come last.
    pub fn linears(&self) -> impl Iterator<Item = &Linear> {
        self.blocks
            .iter()
            .flat_map(|b| b.linears())
            .chain([&self.head_hidden, &self.head_out])
    }

    pub fn enumerate_linears(&self) -> Vec<LinearSite> {
        self.linears().map(|l| l.site).collect()
    }

    pub(crate) fn linear_mut(&mut self, site: &LinearSite) -> Option<&mut Linear> {
        if site.kind.is_classifier() {
            return match site.kind {
                SiteKind::ClassifierHidden => Some(&mut self.head_hidden),
                _ => Some(&mut self.head_out),
            }
            .filter(|l| l.site == *site);
        }
        self.blocks
            .get_mut(site.layer_index)?
            .linears_mut()
            .into_iter()
            .find(|l| l.site == *site)
    }

    pub(crate) fn linears_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.linears_mut())
            .chain([&mut self.head_hidden, &mut self.head_out])
    }

    /// Drops every parameter registered after the bare architecture and
    /// forgets injected modules and the strategy.
    pub(crate) fn reset_to_base(&mut self) {
        self.params.truncate(self.base_len);
        for l in self.linears_mut() {
            l.learner = None;
        }
        for b in &mut self.blocks {
            b.adapters.clear();
        }
        for (_, p) in self.params.iter_mut() {
            p.trainable = true;
            p.grad = None;
        }
        self.strategy = None;
    }

    pub fn validate_batch(&self, batch: &TokenBatch) -> Result<()> {
        if batch.ids.len() != batch.batch * batch.seq {
            return Err(Error::Input(format!(
                "token batch holds {} ids for shape {}x{}",
                batch.ids.len(),
                batch.batch,
                batch.seq
            )));
        }
        if batch.batch == 0 || batch.seq == 0 {
            return Err(Error::Input("empty token batch".into()));
        }
        if batch.seq > self.config.max_seq_len {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_seq_len {}",
                batch.seq, self.config.max_seq_len
            )));
        }
        if let Some(&bad) = batch.ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocab size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Records the encoder forward pass on `tape` and returns the logits node
    /// (`batch × num_labels`).
    pub fn forward(&self, tape: &mut Tape<T>, batch: &TokenBatch) -> Result<NodeId> {
        if !self.params.is_materialized() {
            return Err(Error::Usage("shape-only model cannot run forward".into()));
        }
        self.validate_batch(batch)?;
        let (b, s) = (batch.batch, batch.seq);

        let word = tape.param(&self.params, self.word_emb);
        let tok = tape.gather_rows(word, batch.ids.clone())?;
        let pos = tape.param(&self.params, self.pos_emb);
        let pos = tape.gather_rows(pos, (0..b).flat_map(|_| 0..s).collect())?;
        let h = tape.add(tok, pos)?;
        let mut h = self.layernorm(tape, h, self.emb_ln)?;

        let masks = if batch.has_padding() {
            let rows: Vec<NodeId> = (0..b)
                .map(|i| {
                    let row = batch
                        .row(i)
                        .iter()
                        .map(|&t| if t == PAD_TOKEN { T::lit(MASK_VALUE) } else { T::zero() })
                        .collect();
                    tape.input(DenseMatrix::row_vector(row))
                })
                .collect();
            Some(rows)
        } else {
            None
        };

        for block in &self.blocks {
            h = self.block_forward(tape, block, h, b, s, masks.as_deref())?;
        }

        let pooled = tape.gather_rows(h, (0..b).map(|i| i * s).collect())?;
        let hidden = self.linear_forward(tape, &self.head_hidden, pooled)?;
        let hidden = tape.tanh(hidden);
        self.linear_forward(tape, &self.head_out, hidden)
    }

    /// Forward pass without keeping the tape.
    pub fn logits(&self, batch: &TokenBatch) -> Result<DenseMatrix<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch)?;
        Ok(tape.value(out).clone())
    }

    /// Cross-entropy for classification, mean squared error for regression.
    pub fn loss(&self, tape: &mut Tape<T>, logits: NodeId, targets: &Targets) -> Result<NodeId> {
        match (self.config.task_kind, targets) {
            (TaskKind::Classification, Targets::Classes(labels)) => tape.cross_entropy(logits, labels),
            (TaskKind::Regression, Targets::Values(values)) => {
                let target = DenseMatrix::from_vec(
                    values.len(),
                    1,
                    values.iter().map(|&v| T::lit(v)).collect(),
                )?;
                tape.mse(logits, target)
            }
            _ => Err(Error::Input("targets do not match the model task kind".into())),
        }
    }

    /// `x · Wᵀ + b`, plus the learner path `(x · P1ᵀ) · P2ᵀ` when attached.
    pub(crate) fn linear_forward(&self, tape: &mut Tape<T>, lin: &Linear, x: NodeId) -> Result<NodeId> {
        let w = tape.param(&self.params, lin.weight);
        let b = tape.param(&self.params, lin.bias);
        let y = tape.matmul_nt(x, w)?;
        let y = tape.add_row(y, b)?;
        match &lin.learner {
            None => Ok(y),
            Some(m) => {
                let p1 = tape.param(&self.params, m.p1);
                let p2 = tape.param(&self.params, m.p2);
                let z = tape.matmul_nt(x, p1)?;
                let z = tape.matmul_nt(z, p2)?;
                tape.add(y, z)
            }
        }
    }

    fn layernorm(&self, tape: &mut Tape<T>, x: NodeId, ln: LayerNormParams) -> Result<NodeId> {
        let g = tape.param(&self.params, ln.gamma);
        let b = tape.param(&self.params, ln.beta);
        tape.layernorm_rows(x, g, b, T::lit(LAYERNORM_EPS))
    }

    fn adapter_branch(&self, tape: &mut Tape<T>, adapter: &Adapter, x: NodeId) -> Result<NodeId> {
        let w1 = tape.param(&self.params, adapter.l1_weight);
        let b1 = tape.param(&self.params, adapter.l1_bias);
        let w2 = tape.param(&self.params, adapter.l2_weight);
        let b2 = tape.param(&self.params, adapter.l2_bias);
        let h = tape.matmul_nt(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.gelu(h);
        let y = tape.matmul_nt(h, w2)?;
        tape.add_row(y, b2)
    }

    fn attention(
        &self,
        tape: &mut Tape<T>,
        block: &Block,
        x: NodeId,
        batch: usize,
        seq: usize,
        masks: Option<&[NodeId]>,
    ) -> Result<NodeId> {
        let q = self.linear_forward(tape, &block.q, x)?;
        let k = self.linear_forward(tape, &block.k, x)?;
        let v = self.linear_forward(tape, &block.v, x)?;
        let dh = self.config.d_head();
        let inv_sqrt = T::one() / T::lit(dh as f64).sqrt();
        let mut rows = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut heads = Vec::with_capacity(self.config.num_heads);
            for h in 0..self.config.num_heads {
                let qs = tape.slice(q, b * seq, seq, h * dh, dh)?;
                let ks = tape.slice(k, b * seq, seq, h * dh, dh)?;
                let vs = tape.slice(v, b * seq, seq, h * dh, dh)?;
                let scores = tape.matmul_nt(qs, ks)?;
                let mut scores = tape.scale(scores, inv_sqrt);
                if let Some(m) = masks {
                    scores = tape.add_row(scores, m[b])?;
                }
                let probs = tape.softmax_rows(scores);
                heads.push(tape.matmul(probs, vs)?);
            }
            rows.push(tape.concat_cols(&heads)?);
        }
        let ctx = tape.concat_rows(&rows)?;
        self.linear_forward(tape, &block.out, ctx)
    }

    pub(crate) fn block_forward(
        &self,
        tape: &mut Tape<T>,
        block: &Block,
        x: NodeId,
        batch: usize,
        seq: usize,
        masks: Option<&[NodeId]>,
    ) -> Result<NodeId> {
        let mut a = self.attention(tape, block, x, batch, seq, masks)?;
        if let Some(ad) = block.adapter(AdapterSlot::AfterAttention) {
            let branch = self.adapter_branch(tape, ad, a)?;
            a = tape.add(a, branch)?;
        }
        let h = tape.add(x, a)?;
        let h = self.layernorm(tape, h, block.attn_ln)?;

        let up = self.linear_forward(tape, &block.ffn_up, h)?;
        let up = tape.gelu(up);
        let mut f = self.linear_forward(tape, &block.ffn_down, up)?;
        if let Some(ad) = block.adapter(AdapterSlot::AfterFfn) {
            let branch = self.adapter_branch(tape, ad, f)?;
            f = tape.add(f, branch)?;
        }
        if let Some(ad) = block.adapter(AdapterSlot::ParallelFfn) {
            let branch = self.adapter_branch(tape, ad, h)?;
            let branch = tape.scale(branch, T::lit(ad.scale));
            f = tape.add(f, branch)?;
        }
        let out = tape.add(h, f)?;
        self.layernorm(tape, out, block.ffn_ln)
    }
}

fn register_layernorm<T: Scalar>(params: &mut ParamStore<T>, prefix: &str, d: usize) -> Result<LayerNormParams> {
    let gamma = params.register(format!("{prefix}.weight"), (1, d), ParamGroup::LayerNorm, || {
        DenseMatrix::filled(1, d, T::one())
    })?;
    let beta = params.register(format!("{prefix}.bias"), (1, d), ParamGroup::LayerNorm, || {
        DenseMatrix::zeros(1, d)
    })?;
    Ok(LayerNormParams { gamma, beta })
}

fn register_linear<T: Scalar>(params: &mut ParamStore<T>, init: &mut Init<'_>, site: LinearSite) -> Result<Linear> {
    let prefix = site.prefix();
    let (wg, bg) = site.kind.groups();
    let weight = params.register(format!("{prefix}.weight"), (site.out_dim, site.in_dim), wg, || {
        init.normal(site.out_dim, site.in_dim)
    })?;
    let bias = params.register(format!("{prefix}.bias"), (1, site.out_dim), bg, || {
        DenseMatrix::zeros(1, site.out_dim)
    })?;
    Ok(Linear {
        site,
        weight,
        bias,
        learner: None,
    })
}
