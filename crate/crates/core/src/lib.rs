//! Pool-based active learning over precomputed embedding caches.
//!
//! A frozen zero-shot teacher (prototype similarity) and a trainable linear
//! student each produce split-conformal label sets. Samples where the two
//! disagree, or where the student is unsure, are scored highest; the batch
//! is then chosen by greedy uncertainty-weighted coverage in teacher space.
//!
//! Module map:
//! - [`feature_store`]: embedding tables, the EMBC cache format, pool state,
//!   synthetic data.
//! - [`teacher`], [`student`]: the two predictors.
//! - [`conformal`]: nonconformity scores, thresholds, prediction sets.
//! - [`scoring`]: disagreement score and diagnostics.
//! - [`selection`]: subpooling, oversampling and greedy coverage.
//! - [`baselines`]: comparison strategies.
//! - [`harness`]: the cold-start loop, metrics and reports.
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod conformal;
pub mod error;
pub mod feature_store;
pub mod harness;
pub mod matrix;
pub mod posterior;
pub mod rng;
pub mod scoring;
pub mod selection;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};

/// Engine version recorded in every report manifest.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
