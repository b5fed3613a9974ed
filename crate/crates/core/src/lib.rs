//! Biased mixtures of experts for data-cost-constrained inference.
//!
//! A gating network routes every input to exactly one of several frozen
//! experts, each of which consumes a differently reduced (and differently
//! priced) view of the input. A bias vector fixes how often each expert may
//! be used, and therefore the average number of bytes sent per input.
//!
//! - [`nn`]: dense networks, cross-entropy and SGD.
//! - [`gating`]: soft and top-1 gates, per-batch utility.
//! - [`bias`]: bias vectors, the soft bias loss, batchwise enforcement.
//! - [`mixture`]: mixture forward pass and gating training.
//! - [`solver`]: budget-to-bias linear program (simplex) and a grid oracle.
//! - [`synth`]: synthetic tasks, preprocessing costs, expert training.
//! - [`eval`]: cost/performance curves, baselines and sweeps.

pub mod bias;
pub mod error;
pub mod eval;
pub mod gating;
pub mod mixture;
pub mod nn;
pub mod seed;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
