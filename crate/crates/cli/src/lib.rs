//! Command-line driver: scene generation, training, inference, evaluation,
//! gradient checking and ablation sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, Result};
