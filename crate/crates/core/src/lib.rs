//! Uncertainty-gated latent adaptation for a contextual point-mass task.

pub mod adversary;
pub mod encoders;
pub mod envsim;
pub mod error;
pub mod evalcli;
pub mod netcore;
pub mod pipeline;
pub mod ppo;
pub mod rng;

pub use error::{Error, Result};
