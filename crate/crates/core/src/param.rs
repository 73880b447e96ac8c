//! Named parameters with trainable flags and gradient slots.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

/// Coarse parameter role. Strategies freeze and unfreeze by group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    MhaWeight,
    MhaBias,
    FfnWeight,
    FfnBias,
    LayerNorm,
    Embedding,
    Classifier,
    LearnerProjection,
    Adapter,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::MhaWeight,
        ParamGroup::MhaBias,
        ParamGroup::FfnWeight,
        ParamGroup::FfnBias,
        ParamGroup::LayerNorm,
        ParamGroup::Embedding,
        ParamGroup::Classifier,
        ParamGroup::LearnerProjection,
        ParamGroup::Adapter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::MhaWeight => "mha_weight",
            ParamGroup::MhaBias => "mha_bias",
            ParamGroup::FfnWeight => "ffn_weight",
            ParamGroup::FfnBias => "ffn_bias",
            ParamGroup::LayerNorm => "layernorm",
            ParamGroup::Embedding => "embedding",
            ParamGroup::Classifier => "classifier",
            ParamGroup::LearnerProjection => "learner_projection",
            ParamGroup::Adapter => "adapter",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub group: ParamGroup,
    pub trainable: bool,
    pub value: DenseMatrix<T>,
    pub grad: Option<DenseMatrix<T>>,
    shape: (usize, usize),
}

impl<T: Scalar> Parameter<T> {
    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    /// Bias vectors, including the layernorm shift. Names follow `*.bias`.
    pub fn is_bias(&self) -> bool {
        self.name.ends_with(".bias")
    }

    /// Decoupled weight decay applies to everything except biases and layernorm.
    pub fn decays(&self) -> bool {
        !self.is_bias() && self.group != ParamGroup::LayerNorm
    }
}

/// Ordered parameter registry.
///
/// A store is either materialized (values allocated) or shape-only; shape-only
/// stores back parameter accounting for configurations too large to allocate.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
    materialized: bool,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(materialized: bool) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            materialized,
        }
    }

    pub fn is_materialized(&self) -> bool {
        self.materialized
    }

    /// Registers a trainable parameter; `init` runs only for materialized stores.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: (usize, usize),
        group: ParamGroup,
        init: impl FnOnce() -> DenseMatrix<T>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Usage(format!("parameter {name} registered twice")));
        }
        let value = if self.materialized {
            let v = init();
            if v.shape() != shape {
                return Err(Error::shape("register", shape, v.shape()));
            }
            v
        } else {
            DenseMatrix::zeros(0, 0)
        };
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            group,
            trainable: true,
            value,
            grad: None,
            shape,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: DenseMatrix<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if value.shape() != p.shape {
            return Err(Error::shape("set_value", p.shape, value.shape()));
        }
        p.value = value;
        Ok(())
    }

    /// Drops every parameter registered after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        for p in self.params.drain(len.min(self.params.len())..) {
            self.index.remove(&p.name);
        }
    }

    /// Adds `grad` into the slot of a trainable parameter; frozen ones are skipped.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &DenseMatrix<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if !p.trainable {
            return Ok(());
        }
        match &mut p.grad {
            Some(g) => g.add_assign(grad)?,
            None => {
                if grad.shape() != p.shape {
                    return Err(Error::shape("accumulate_grad", p.shape, grad.shape()));
                }
                p.grad = Some(grad.clone());
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    /// Sum of element counts over the live trainable mask.
    pub fn trained_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(Parameter::numel).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new(true);
        s.register("a.weight", (2, 2), ParamGroup::MhaWeight, || DenseMatrix::zeros(2, 2))
            .unwrap();
        assert!(s
            .register("a.weight", (2, 2), ParamGroup::MhaWeight, || DenseMatrix::zeros(2, 2))
            .is_err());
    }

    #[test]
    fn shape_only_store_counts_without_allocating() {
        let mut s = ParamStore::<f64>::new(false);
        let id = s
            .register("big.weight", (30_000, 768), ParamGroup::Embedding, || unreachable!())
            .unwrap();
        assert_eq!(s.get(id).value.len(), 0);
        assert_eq!(s.total_count(), 30_000 * 768);
    }

    #[test]
    fn frozen_parameter_gets_no_grad() {
        let mut s = ParamStore::<f64>::new(true);
        let id = s
            .register("w.weight", (1, 2), ParamGroup::FfnWeight, || DenseMatrix::zeros(1, 2))
            .unwrap();
        s.get_mut(id).trainable = false;
        s.accumulate_grad(id, &DenseMatrix::filled(1, 2, 1.0)).unwrap();
        assert!(s.get(id).grad.is_none());
    }

    #[test]
    fn bias_and_decay_classification() {
        let mut s = ParamStore::<f64>::new(false);
        let ln = s.register("l.ln.bias", (1, 4), ParamGroup::LayerNorm, || unreachable!()).unwrap();
        let g = s.register("l.ln.weight", (1, 4), ParamGroup::LayerNorm, || unreachable!()).unwrap();
        let w = s.register("l.q.weight", (4, 4), ParamGroup::MhaWeight, || unreachable!()).unwrap();
        assert!(s.get(ln).is_bias());
        assert!(!s.get(g).is_bias());
        assert!(!s.get(g).decays());
        assert!(s.get(w).decays());
    }
}
