//! Parameter-efficient fine-tuning laboratory.
//!
//! A micro transformer encoder with a reverse-mode tape, learner modules
//! (parallel low-rank projections that collapse into the host weight after
//! training), priming schedules, baseline strategies (full fine-tuning,
//! BitFit, sequential and parallel adapters, frozen FFNs), AdamW, parameter
//! accounting and a deterministic training harness.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what training, checkpoints and all
//! tolerances use.

pub mod accounting;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod schedule;
pub mod strategy;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = tensor::DenseMatrix<f64>;
pub type Model = model::Model<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type ParamStore = param::ParamStore<f64>;
pub type AdamW = optim::AdamW<f64>;
