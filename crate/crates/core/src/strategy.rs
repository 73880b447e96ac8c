//! Fine-tuning strategies: which modules get injected and which parameters
//! are trained. The classifier head is trainable under every strategy.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{self, LearnerInit};
use crate::model::Model;
use crate::param::{ParamGroup, ParamId, Parameter};
use crate::scalar::Scalar;
use crate::tensor::{gelu, DenseMatrix};

/// RNG stream used for module initialization during [`apply`].
pub(crate) const STRATEGY_STREAM: u64 = 1;

/// Std of the adapter down-projection `L1`; `L2` starts at zero.
pub const ADAPTER_L1_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    Full,
    Bitfit,
    AdapterSequential {
        hidden: usize,
    },
    AdapterParallel {
        hidden: usize,
        scale: f64,
    },
    FreezeFfns,
    Learner {
        rank: usize,
        priming_epochs: usize,
        #[serde(default)]
        init: LearnerInit,
    },
}

impl StrategySpec {
    pub fn learner(rank: usize, priming_epochs: usize) -> Self {
        StrategySpec::Learner {
            rank,
            priming_epochs,
            init: LearnerInit::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StrategySpec::AdapterSequential { hidden } | StrategySpec::AdapterParallel { hidden, .. }
                if hidden == 0 =>
            {
                Err(Error::Usage("adapter hidden size must be at least 1".into()))
            }
            StrategySpec::AdapterParallel { scale, .. } if !scale.is_finite() => {
                Err(Error::Usage("adapter scale must be finite".into()))
            }
            StrategySpec::Learner { rank: 0, .. } => Err(Error::Usage("learner rank must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Short kind name as used in config files.
    pub fn kind_name(&self) -> &'static str {
        match self {
            StrategySpec::Full => "full",
            StrategySpec::Bitfit => "bitfit",
            StrategySpec::AdapterSequential { .. } => "adapter_sequential",
            StrategySpec::AdapterParallel { .. } => "adapter_parallel",
            StrategySpec::FreezeFfns => "freeze_ffns",
            StrategySpec::Learner { .. } => "learner",
        }
    }

    /// Human-readable label including hyperparameters, e.g. `learner_l8_p2`.
    pub fn label(&self) -> String {
        match self {
            StrategySpec::AdapterSequential { hidden } => format!("adapter_sequential_h{hidden}"),
            StrategySpec::AdapterParallel { hidden, scale } => format!("adapter_parallel_h{hidden}_s{scale}"),
            StrategySpec::Learner {
                rank, priming_epochs, ..
            } => format!("learner_l{rank}_p{priming_epochs}"),
            other => other.kind_name().to_string(),
        }
    }

    pub fn priming_epochs(&self) -> usize {
        match self {
            StrategySpec::Learner { priming_epochs, .. } => *priming_epochs,
            _ => 0,
        }
    }

    /// Trainable rule. `priming` is true while a learner run is inside its
    /// priming epochs; it only ever toggles `mha_weight`.
    pub fn is_trainable<T: Scalar>(&self, p: &Parameter<T>, priming: bool) -> bool {
        use ParamGroup as G;
        if p.group == G::Classifier {
            return true;
        }
        match self {
            StrategySpec::Full => true,
            StrategySpec::Bitfit => p.is_bias(),
            StrategySpec::AdapterSequential { .. } | StrategySpec::AdapterParallel { .. } => {
                matches!(p.group, G::Adapter | G::LayerNorm)
            }
            StrategySpec::FreezeFfns => matches!(p.group, G::MhaWeight | G::MhaBias | G::LayerNorm),
            StrategySpec::Learner { .. } => {
                matches!(p.group, G::LearnerProjection | G::MhaBias | G::FfnBias | G::LayerNorm)
                    || (priming && p.group == G::MhaWeight)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AdapterSlot {
    /// Sequential, on the attention sub-layer output before its layernorm.
    AfterAttention,
    /// Sequential, on the FFN sub-layer output before its layernorm.
    AfterFfn,
    /// Parallel to the FFN, reading the FFN input; output scaled then added.
    ParallelFfn,
}

impl AdapterSlot {
    pub fn code(self) -> u8 {
        match self {
            AdapterSlot::AfterAttention => 0,
            AdapterSlot::AfterFfn => 1,
            AdapterSlot::ParallelFfn => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(AdapterSlot::AfterAttention),
            1 => Some(AdapterSlot::AfterFfn),
            2 => Some(AdapterSlot::ParallelFfn),
            _ => None,
        }
    }

    fn path(self) -> &'static str {
        match self {
            AdapterSlot::AfterAttention => "adapter_attn",
            AdapterSlot::AfterFfn => "adapter_ffn",
            AdapterSlot::ParallelFfn => "adapter_parallel",
        }
    }
}

/// Bottleneck FFN `L2(gelu(L1 x))`: `L1` maps `d_model → hidden`, `L2` maps back.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub layer_index: usize,
    pub slot: AdapterSlot,
    pub hidden: usize,
    pub scale: f64,
    pub l1_weight: ParamId,
    pub l1_bias: ParamId,
    pub l2_weight: ParamId,
    pub l2_bias: ParamId,
}

impl Adapter {
    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.l1_weight, self.l1_bias, self.l2_weight, self.l2_bias]
    }
}

/// Registers an adapter in `layer` at `slot`. `L1 ~ normal(0, 0.01)`, `L2 = 0`.
pub(crate) fn inject_adapter<T: Scalar>(
    model: &mut Model<T>,
    layer: usize,
    slot: AdapterSlot,
    hidden: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Adapter> {
    let d = model.config().d_model;
    if layer >= model.blocks.len() {
        return Err(Error::Usage(format!("no encoder layer {layer}")));
    }
    if model.blocks[layer].adapters.iter().any(|a| a.slot == slot) {
        return Err(Error::Usage(format!("adapter already present at layer {layer} {slot:?}")));
    }
    let prefix = format!("layer.{layer}.{}", slot.path());
    let normal = Normal::new(0.0, ADAPTER_L1_STD).expect("valid std");
    let params = model.params_mut();
    let l1_weight = params.register(format!("{prefix}.l1.weight"), (hidden, d), ParamGroup::Adapter, || {
        DenseMatrix::from_fn(hidden, d, |_, _| T::lit(normal.sample(rng)))
    })?;
    let l1_bias = params.register(format!("{prefix}.l1.bias"), (1, hidden), ParamGroup::Adapter, || {
        DenseMatrix::zeros(1, hidden)
    })?;
    let l2_weight = params.register(format!("{prefix}.l2.weight"), (d, hidden), ParamGroup::Adapter, || {
        DenseMatrix::zeros(d, hidden)
    })?;
    let l2_bias = params.register(format!("{prefix}.l2.bias"), (1, d), ParamGroup::Adapter, || {
        DenseMatrix::zeros(1, d)
    })?;
    let adapter = Adapter {
        layer_index: layer,
        slot,
        hidden,
        scale,
        l1_weight,
        l1_bias,
        l2_weight,
        l2_bias,
    };
    model.blocks[layer].adapters.push(adapter.clone());
    Ok(adapter)
}

/// Configures a freshly built model for `spec`: injects modules (seeded from
/// `seed`) and sets the trainable mask for epoch 0.
pub fn apply<T: Scalar>(spec: &StrategySpec, model: &mut Model<T>, seed: u64) -> Result<()> {
    if let Some(existing) = model.strategy() {
        return Err(Error::Usage(format!(
            "model already configured with strategy {}",
            existing.label()
        )));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STRATEGY_STREAM);

    match *spec {
        StrategySpec::AdapterSequential { hidden } => {
            for layer in 0..model.config().num_layers {
                inject_adapter(model, layer, AdapterSlot::AfterAttention, hidden, 1.0, &mut rng)?;
                inject_adapter(model, layer, AdapterSlot::AfterFfn, hidden, 1.0, &mut rng)?;
            }
        }
        StrategySpec::AdapterParallel { hidden, scale } => {
            for layer in 0..model.config().num_layers {
                inject_adapter(model, layer, AdapterSlot::ParallelFfn, hidden, scale, &mut rng)?;
            }
        }
        StrategySpec::Learner { rank, init, .. } => {
            let sites: Vec<_> = model
                .enumerate_linears()
                .into_iter()
                .filter(|s| s.kind.is_mha() || s.kind.is_ffn())
                .collect();
            for site in sites {
                learner::attach(model, &site, rank, init, &mut rng)?;
            }
        }
        StrategySpec::Full | StrategySpec::Bitfit | StrategySpec::FreezeFfns => {}
    }
    model.strategy = Some(spec.clone());
    set_mask(model, spec.priming_epochs() > 0);
    Ok(())
}

/// Recomputes every trainable flag from the model's strategy. Returns the
/// parameters that went from trainable to frozen.
pub(crate) fn set_mask<T: Scalar>(model: &mut Model<T>, priming: bool) -> Vec<ParamId> {
    let spec = model.strategy.clone().unwrap_or(StrategySpec::Full);
    let mut newly_frozen = Vec::new();
    for (id, p) in model.params_mut().iter_mut() {
        let flag = spec.is_trainable(p, priming);
        if p.trainable && !flag {
            newly_frozen.push(id);
            p.grad = None;
        }
        p.trainable = flag;
    }
    newly_frozen
}

/// Name → trainable flag for every parameter.
pub fn trainable_mask<T: Scalar>(model: &Model<T>) -> BTreeMap<String, bool> {
    model
        .params()
        .iter()
        .map(|(_, p)| (p.name.clone(), p.trainable))
        .collect()
}

/// `L2(gelu(L1 x))` on plain matrices.
pub fn adapter_branch<T: Scalar>(model: &Model<T>, adapter: &Adapter, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let p = model.params();
    let h = x
        .matmul_nt(&p.get(adapter.l1_weight).value)?
        .add_row_broadcast(&p.get(adapter.l1_bias).value)?
        .map(gelu);
    h.matmul_nt(&p.get(adapter.l2_weight).value)?
        .add_row_broadcast(&p.get(adapter.l2_bias).value)
}

/// Adapter output on plain matrices. Sequential slots return
/// `x + L2(gelu(L1 x))`; the parallel slot returns
/// `ffn_out + scale · L2(gelu(L1 x))` and requires the FFN output for `x`.
pub fn adapter_forward<T: Scalar>(
    model: &Model<T>,
    adapter: &Adapter,
    x: &DenseMatrix<T>,
    ffn_out: Option<&DenseMatrix<T>>,
) -> Result<DenseMatrix<T>> {
    if x.cols() != model.config().d_model {
        return Err(Error::shape("adapter_forward", x.shape(), (x.rows(), model.config().d_model)));
    }
    let branch = adapter_branch(model, adapter, x)?;
    match adapter.slot {
        AdapterSlot::AfterAttention | AdapterSlot::AfterFfn => x.add(&branch),
        AdapterSlot::ParallelFfn => {
            let ffn = ffn_out.ok_or_else(|| Error::Usage("parallel adapter needs the FFN output".into()))?;
            ffn.add(&branch.scale(T::lit(adapter.scale)))
        }
    }
}
