//! Experiment harness behind the CLI: run configuration, training with CSV
//! logging, multi-method comparison, collapse and parameter counting.

pub mod commands;
pub mod compare;
pub mod config;
pub mod run;

pub use commands::{collapse_cmd, count_params_cmd, CollapseReport, CountTable};
pub use compare::{compare, CompareReport};
pub use config::{DatasetSource, Overrides, RunConfig};
pub use run::{train, train_seed, RunRecord, TrainEvent};
