//! Predictive-coding networks trained by inference learning, with a
//! backpropagation baseline, the MQ optimizer and numerical diagnostics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod math;
pub mod optim;
pub mod pcn;

pub use error::{PcError, Result};
