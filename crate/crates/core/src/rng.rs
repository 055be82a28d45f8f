//! Named random streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from
//! the run seed, so enabling or disabling one component never shifts the
//! random numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod stream {
    pub const POLICY_INIT: u64 = 1;
    pub const CRITIC_INIT: u64 = 2;
    pub const ENCODER_INIT: u64 = 3;
    pub const ADVERSARY_INIT: u64 = 4;
    pub const BASE_INIT: u64 = 5;
    pub const EPINET_LEARNABLE_INIT: u64 = 6;
    pub const EPINET_PRIOR_INIT: u64 = 7;
    pub const PPO_UPDATE: u64 = 8;
    pub const ADVERSARY_UPDATE: u64 = 9;
    pub const SUPERVISED_UPDATE: u64 = 10;
    pub const CALIBRATION: u64 = 11;

    /// Offsets for per-environment streams; the env index is added.
    pub const ENV_DYNAMICS: u64 = 1 << 20;
    pub const ENV_ACTIONS: u64 = 2 << 20;
    pub const ENV_ADVERSARY: u64 = 3 << 20;
    pub const ENV_LATENT: u64 = 4 << 20;

    /// Phase offsets keep supervised/calibration environments disjoint
    /// from the RL-phase ones.
    pub const PHASE_RL: u64 = 0;
    pub const PHASE_SUPERVISED: u64 = 1 << 28;
    pub const PHASE_CALIBRATION: u64 = 2 << 28;
    pub const PHASE_EVAL: u64 = 3 << 28;
    pub const PHASE_FALLBACK: u64 = 1 << 32;
}

/// Deterministic stream `id` of the generator seeded by `seed`.
pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
