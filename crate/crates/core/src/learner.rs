//! Learner modules: a pair of projections `P1 (l × d)` and `P2 (h × l)` added
//! in parallel to a frozen linear layer, with no nonlinearity and no scaling
//! between them. After training the product folds into the host weight,
//! `W̃ = W + P2 · P1`, restoring the plain architecture.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LinearSite, Model};
use crate::param::{ParamGroup, ParamId};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

/// Std of `P1` under [`LearnerInit::RandomP1`].
pub const LEARNER_P1_STD: f64 = 0.02;

/// How projections are initialized at attachment. Both variants leave the
/// host function unchanged because `P2` starts at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerInit {
    /// `P1 ~ normal(0, 0.02)`, `P2 = 0`.
    #[default]
    RandomP1,
    /// `P1 = P2 = 0`. Both projection gradients are identically zero at this
    /// point, so the projections never move under gradient descent.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LearnerModule {
    pub site: LinearSite,
    pub rank: usize,
    pub p1: ParamId,
    pub p2: ParamId,
}

impl LearnerModule {
    /// `l · (d + h)`.
    pub fn param_count(&self) -> usize {
        self.rank * (self.site.in_dim + self.site.out_dim)
    }
}

/// Attaches a learner of the given rank to `site`. The host weight is frozen,
/// the host bias and both projections are trainable.
pub fn attach<T: Scalar>(
    model: &mut Model<T>,
    site: &LinearSite,
    rank: usize,
    init: LearnerInit,
    rng: &mut ChaCha8Rng,
) -> Result<LearnerModule> {
    if rank == 0 {
        return Err(Error::Usage("learner rank must be at least 1".into()));
    }
    let (weight, bias) = {
        let lin = model
            .linear_mut(site)
            .ok_or_else(|| Error::Usage(format!("no linear site {}", site.prefix())))?;
        if lin.learner.is_some() {
            return Err(Error::Usage(format!("learner already attached to {}", site.prefix())));
        }
        (lin.weight, lin.bias)
    };

    let prefix = site.prefix();
    let (d, h) = (site.in_dim, site.out_dim);
    let normal = Normal::new(0.0, LEARNER_P1_STD).expect("valid std");
    let params = model.params_mut();
    let p1 = params.register(format!("{prefix}.learner.p1"), (rank, d), ParamGroup::LearnerProjection, || {
        match init {
            LearnerInit::RandomP1 => DenseMatrix::from_fn(rank, d, |_, _| T::lit(normal.sample(rng))),
            LearnerInit::Zero => DenseMatrix::zeros(rank, d),
        }
    })?;
    let p2 = params.register(format!("{prefix}.learner.p2"), (h, rank), ParamGroup::LearnerProjection, || {
        DenseMatrix::zeros(h, rank)
    })?;
    params.get_mut(weight).trainable = false;
    params.get_mut(bias).trainable = true;

    let module = LearnerModule {
        site: *site,
        rank,
        p1,
        p2,
    };
    model
        .linear_mut(site)
        .expect("site resolved above")
        .learner = Some(module.clone());
    Ok(module)
}

/// `x · Wᵀ + b + (x · P1ᵀ) · P2ᵀ`, evaluated as two thin products.
pub fn wrapped_forward<T: Scalar>(
    x: &DenseMatrix<T>,
    w: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    p1: &DenseMatrix<T>,
    p2: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    let base = x.matmul_nt(w)?.add_row_broadcast(b)?;
    let low = x.matmul_nt(p1)?.matmul_nt(p2)?;
    base.add(&low)
}

/// `W̃ = W + P2 · P1`.
pub fn collapse<T: Scalar>(w: &DenseMatrix<T>, p1: &DenseMatrix<T>, p2: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let update = p2.matmul(p1)?;
    if update.shape() != w.shape() {
        return Err(Error::shape("collapse", w.shape(), update.shape()));
    }
    w.add(&update)
}

/// Folds every learner into its host weight and returns the plain model:
/// baseline parameter set, baseline op count, no strategy, all trainable.
/// Host biases are untouched.
pub fn collapse_all<T: Scalar>(model: &Model<T>) -> Result<Model<T>> {
    if model.has_adapters() {
        return Err(Error::Usage("collapse_all: adapters cannot be collapsed".into()));
    }
    let mut out = model.clone();
    if out.params().is_materialized() {
        let folds: Vec<_> = out
            .linears()
            .filter_map(|l| l.learner.as_ref().map(|m| (l.weight, m.p1, m.p2)))
            .collect();
        for (w, p1, p2) in folds {
            let params = out.params();
            let merged = collapse(&params.get(w).value, &params.get(p1).value, &params.get(p2).value)?;
            out.params_mut().set_value(w, merged)?;
        }
    }
    out.reset_to_base();
    Ok(out)
}
