//! Datasets, configuration, the training loop and diagnostic reports for
//! predictive-coding networks built on `pclab-core`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod diagnose;
pub mod error;
pub mod metrics;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
