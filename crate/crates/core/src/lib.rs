//! Admissibility-first validation for causal discovery outputs.
//!
//! Discovered graphs are treated as structural hypotheses for a target
//! treatment-effect query. Each one passes through an admissibility gate
//! (backdoor identification plus positivity) before any estimation; admissible
//! graphs get multi-estimator effects, placebo and subset refutation,
//! E-value sensitivity, and a trust/caution/reject label, aggregated across a
//! nested ladder of background-knowledge constraints.
//!
//! Grid runs, bootstrap replicates, and Monte-Carlo sampling parallelize via
//! rayon under the default `parallel` feature; disabling it falls back to
//! sequential execution with identical outputs.

pub mod ci;
pub mod dataset;
pub mod discovery;
pub mod effect;
pub mod error;
pub mod exec;
pub mod graph;
pub mod identify;
pub mod overlap;
pub mod pipeline;
pub mod refute;
pub mod synth;

mod glm;
mod rng;

pub use error::{Error, Result};
