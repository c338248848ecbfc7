//! Belief propagation on pairwise Markov random fields with pluggable
//! exact and relaxed priority schedulers.

pub mod engines;
pub mod error;
pub mod models;
pub mod mrf;
pub mod rng;
pub mod scalar;
pub mod schedulers;
pub mod tree_dynamics;

pub use error::{Error, Result};
pub use mrf::{MarkovRandomField, MessageId, Messages, SharedMessages};
pub use rng::SplitMix64;
pub use scalar::Real;

/// Double-precision model, the default for experiments.
pub type Mrf = MarkovRandomField<f64>;
/// Single-precision model.
pub type Mrf32 = MarkovRandomField<f32>;
