//! Spiking dynamic-graph network for multivariate temporal point processes.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod events;
pub mod experiment;
pub mod graph;
pub mod plasticity;
pub mod rng;
pub mod snn;
pub mod stats;
pub mod synth;
pub mod tpp;

pub use error::{Error, Result};
pub use events::{Event, EventSequence, SpikeTrain};
