//! Epoch-indexed phase control. For learner runs with priming, the attention
//! weights train during epochs `0..p` and freeze from epoch `p` onward.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::AdamW;
use crate::scalar::Scalar;
use crate::strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhasePlan {
    pub priming_epochs: usize,
    pub total_epochs: usize,
}

impl PhasePlan {
    pub fn new(priming_epochs: usize, total_epochs: usize) -> Self {
        Self {
            priming_epochs,
            total_epochs,
        }
    }

    /// Plan implied by the model's configured strategy.
    pub fn for_model<T: Scalar>(model: &Model<T>, total_epochs: usize) -> Self {
        let p = model.strategy().map_or(0, |s| s.priming_epochs());
        Self::new(p, total_epochs)
    }

    pub fn is_priming(&self, epoch: usize) -> bool {
        epoch < self.priming_epochs
    }
}

/// Logged whenever the trained parameter count changes at an epoch boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseTransition {
    pub epoch: usize,
    pub old_trained: usize,
    pub new_trained: usize,
}

/// Applies the plan's mask for epoch `epoch`. Moments of newly frozen
/// parameters are dropped from the optimizer.
pub fn on_epoch_start<T: Scalar>(
    epoch: usize,
    plan: &PhasePlan,
    model: &mut Model<T>,
    optimizer: Option<&mut AdamW<T>>,
) -> Result<Option<PhaseTransition>> {
    if epoch >= plan.total_epochs {
        return Err(Error::Usage(format!(
            "epoch {epoch} outside plan of {} epochs",
            plan.total_epochs
        )));
    }
    let old = model.params().trained_count();
    let frozen = strategy::set_mask(model, plan.is_priming(epoch));
    if let Some(opt) = optimizer {
        for id in frozen {
            opt.drop_state(id);
        }
    }
    let new = model.params().trained_count();
    Ok((old != new).then_some(PhaseTransition {
        epoch,
        old_trained: old,
        new_trained: new,
    }))
}
