use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NUM_ACTUATORS;
use crate::error::{Error, Result};

/// Length of [`Context::features`].
pub const CONTEXT_FEATURES: usize = 2 + 2 * NUM_ACTUATORS + NUM_ACTUATORS;

/// Dynamics parameters of one member of the contextual MDP family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub mass_multiple: f64,
    pub damping_multiple: f64,
    pub actuator_strength: [f64; NUM_ACTUATORS],
    pub actuator_bias: [f64; NUM_ACTUATORS],
    pub frozen_actuator: Option<usize>,
}

impl Default for Context {
    fn default() -> Self {
        Self::nominal()
    }
}

impl Context {
    pub fn nominal() -> Self {
        Self {
            mass_multiple: 1.0,
            damping_multiple: 1.0,
            actuator_strength: [1.0; NUM_ACTUATORS],
            actuator_bias: [0.0; NUM_ACTUATORS],
            frozen_actuator: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mass_multiple > 0.0
            && self.damping_multiple >= 0.0
            && self.actuator_strength.iter().all(|&s| s > 0.0)
            && self.frozen_actuator.is_none_or(|i| i < NUM_ACTUATORS);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid context {self:?}")))
        }
    }

    /// Privileged feature vector fed to the context encoder: mass, damping,
    /// strengths, biases and a one-hot frozen-actuator indicator.
    pub fn features(&self) -> [f64; CONTEXT_FEATURES] {
        let mut f = [0.0; CONTEXT_FEATURES];
        f[0] = self.mass_multiple;
        f[1] = self.damping_multiple;
        f[2..2 + NUM_ACTUATORS].copy_from_slice(&self.actuator_strength);
        f[2 + NUM_ACTUATORS..2 + 2 * NUM_ACTUATORS].copy_from_slice(&self.actuator_bias);
        if let Some(i) = self.frozen_actuator {
            f[2 + 2 * NUM_ACTUATORS + i] = 1.0;
        }
        f
    }
}

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSetName {
    BaseId,
    BaseIdFrozen,
}

impl fmt::Display for ContextSetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextSetName::BaseId => "base_id",
            ContextSetName::BaseIdFrozen => "base_id_frozen",
        })
    }
}

impl std::str::FromStr for ContextSetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base_id" => Ok(ContextSetName::BaseId),
            "base_id_frozen" => Ok(ContextSetName::BaseIdFrozen),
            other => Err(Error::Config(format!("unknown context set `{other}`"))),
        }
    }
}

/// Training distribution over contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    pub name: ContextSetName,
    pub mass: Range,
    pub damping: Range,
    pub strength: Range,
    pub bias: Range,
    pub frozen_actuator_allowed: bool,
}

impl ContextSet {
    pub fn base_id() -> Self {
        Self {
            name: ContextSetName::BaseId,
            mass: Range::new(0.75, 1.5),
            damping: Range::new(0.25, 2.0),
            strength: Range::new(0.8, 1.2),
            bias: Range::new(-0.1, 0.1),
            frozen_actuator_allowed: false,
        }
    }

    pub fn base_id_frozen() -> Self {
        Self {
            name: ContextSetName::BaseIdFrozen,
            frozen_actuator_allowed: true,
            ..Self::base_id()
        }
    }

    pub fn named(name: ContextSetName) -> Self {
        match name {
            ContextSetName::BaseId => Self::base_id(),
            ContextSetName::BaseIdFrozen => Self::base_id_frozen(),
        }
    }

    /// Each parameter uniform over its range; the frozen actuator uniform
    /// over {none, 0, .., 3} when allowed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Context {
        let mass_multiple = self.mass.sample(rng);
        let damping_multiple = self.damping.sample(rng);
        let mut actuator_strength = [0.0; NUM_ACTUATORS];
        for s in &mut actuator_strength {
            *s = self.strength.sample(rng);
        }
        let mut actuator_bias = [0.0; NUM_ACTUATORS];
        for b in &mut actuator_bias {
            *b = self.bias.sample(rng);
        }
        let frozen_actuator = if self.frozen_actuator_allowed {
            match rng.random_range(0..=NUM_ACTUATORS) {
                0 => None,
                k => Some(k - 1),
            }
        } else {
            None
        };
        Context {
            mass_multiple,
            damping_multiple,
            actuator_strength,
            actuator_bias,
            frozen_actuator,
        }
    }

    pub fn contains(&self, c: &Context) -> bool {
        self.mass.contains(c.mass_multiple)
            && self.damping.contains(c.damping_multiple)
            && c.actuator_strength.iter().all(|&s| self.strength.contains(s))
            && c.actuator_bias.iter().all(|&b| self.bias.contains(b))
            && (c.frozen_actuator.is_none() || self.frozen_actuator_allowed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn base_id_never_freezes() {
        let set = ContextSet::base_id();
        let mut r = rng::stream(0, 0);
        for _ in 0..2_000 {
            let c = set.sample(&mut r);
            assert_eq!(c.frozen_actuator, None);
            assert!(set.contains(&c));
        }
    }

    #[test]
    fn frozen_set_covers_every_option() {
        let set = ContextSet::base_id_frozen();
        let mut r = rng::stream(0, 1);
        let mut seen = [0usize; NUM_ACTUATORS + 1];
        for _ in 0..5_000 {
            let c = set.sample(&mut r);
            seen[c.frozen_actuator.map_or(0, |i| i + 1)] += 1;
            assert!(set.contains(&c));
        }
        // each of 5 options has p = 0.2; 3σ band around 1000
        for s in seen {
            assert!((s as f64 - 1000.0).abs() < 3.0 * (5000.0f64 * 0.2 * 0.8).sqrt(), "{seen:?}");
        }
    }

    #[test]
    fn degenerate_range_is_exact() {
        let set = ContextSet {
            mass: Range::new(1.0, 1.0),
            ..ContextSet::base_id()
        };
        let mut r = rng::stream(0, 2);
        for _ in 0..100 {
            assert_eq!(set.sample(&mut r).mass_multiple, 1.0);
        }
    }

    #[test]
    fn uniform_mass_mean() {
        let set = ContextSet {
            mass: Range::new(0.5, 3.0),
            ..ContextSet::base_id()
        };
        let mut r = rng::stream(7, 3);
        let n = 10_000;
        let mean = (0..n).map(|_| set.sample(&mut r).mass_multiple).sum::<f64>() / n as f64;
        // uniform on [0.5, 3]: mean 1.75, sd 2.5/sqrt(12)
        let se = 2.5 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 1.75).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn features_layout() {
        let mut c = Context::nominal();
        c.frozen_actuator = Some(2);
        let f = c.features();
        assert_eq!(f[0], 1.0);
        assert_eq!(&f[2..6], &[1.0; 4]);
        assert_eq!(&f[10..14], &[0.0, 0.0, 1.0, 0.0]);
    }
}
