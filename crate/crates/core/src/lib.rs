//! Intent-conditioned rectified flow matching for trajectory generation.

pub mod bridge;
pub mod cli;
pub mod distill;
pub mod error;
pub mod fm;
pub mod labeler;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod streaming;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
