//! Configuration, Monte Carlo harness, file formats and figure experiments
//! built on `smrls-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod figures;
pub mod formats;
pub mod harness;

pub use config::{Config, Overrides};
pub use harness::{AggregateResult, RunManifest};

/// A run finished but some fixed point or solver did not converge.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Unconverged(pub String);
