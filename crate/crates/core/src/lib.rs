//! Differentially private synthetic data: privacy accounting, noise
//! mechanisms, histogram and parametric synthesizers, multiple-imputation
//! style inference on released sets, and a Monte Carlo benchmark harness.

// `!(x > 0.0)` is the house idiom for rejecting NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod data;
pub mod error;
#[doc(hidden)]
pub mod gof;
pub mod harness;
pub mod hist_synth;
pub mod inference;
pub mod mechanisms;
pub mod param_synth;
pub mod randvar;

pub use error::{DipsError, Result};
