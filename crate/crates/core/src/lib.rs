//! Adaptive approximate policy iteration (AAPI) for average-reward
//! reinforcement learning, with the POLITEX, k-AAPI and RLSVI baselines,
//! exact tabular oracles and an experiment harness.

pub mod agents;
pub mod envs;
pub mod error;
pub mod eval;
pub mod ftrl;
pub mod harness;
pub mod mdp;
pub mod verify;

pub use error::{Error, Result};

/// Learning-rate constant used by default for AAPI on the tabular chain.
pub const DEFAULT_TABULAR_ETA: f64 = 0.3;
