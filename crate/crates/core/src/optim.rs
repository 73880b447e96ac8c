//! AdamW with decoupled weight decay and a linear-to-zero learning rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::Usage("beta1 and beta2 must lie in (0, 1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::Usage("eps must be positive".into()));
        }
        if self.base_lr < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Usage("learning rate and weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// `base · (1 − t / total)`, no warmup.
pub fn lr_at(step: usize, total: usize, base: f64) -> f64 {
    debug_assert!(total >= 1 && step <= total);
    base * (1.0 - step as f64 / total.max(1) as f64)
}

#[derive(Clone, Debug)]
pub struct MomentState<T> {
    pub m: DenseMatrix<T>,
    pub v: DenseMatrix<T>,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    config: OptimConfig,
    state: BTreeMap<ParamId, MomentState<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    pub fn state(&self, id: ParamId) -> Option<&MomentState<T>> {
        self.state.get(&id)
    }

    /// Forgets the moments of a parameter that has been frozen.
    pub fn drop_state(&mut self, id: ParamId) {
        self.state.remove(&id);
    }

    /// Number of scalars held in moment buffers (two per tracked element).
    pub fn state_elements(&self) -> usize {
        self.state.values().map(|s| s.m.len() + s.v.len()).sum()
    }

    /// One update of every trainable parameter at learning rate `lr`, then
    /// clears all gradients. Frozen parameters are not touched.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if let Some((_, p)) = params.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(Error::Usage(format!(
                "optimizer step before backward: {} has no gradient",
                p.name
            )));
        }
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_m_b1, one_m_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let eps = T::lit(c.eps);
        let lr_t = T::lit(lr);
        let wd = T::lit(c.weight_decay);

        for (id, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            let (rows, cols) = p.shape();
            let st = self.state.entry(id).or_insert_with(|| MomentState {
                m: DenseMatrix::zeros(rows, cols),
                v: DenseMatrix::zeros(rows, cols),
                step: 0,
            });
            st.step += 1;
            let t = st.step as i32;
            let bc1 = T::one() - b1.powi(t);
            let bc2 = T::one() - b2.powi(t);
            let decay = p.decays();
            for (((theta, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(st.m.data_mut())
                .zip(st.v.data_mut())
            {
                *m = b1 * *m + one_m_b1 * g;
                *v = b2 * *v + one_m_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                let mut update = m_hat / (v_hat.sqrt() + eps);
                if decay {
                    update += wd * *theta;
                }
                *theta -= lr_t * update;
            }
        }
        params.zero_grads();
        Ok(())
    }
}
