//! Planar point mass driven by four redundant actuators. The dynamics
//! depend on a sampled [`Context`]; the observation never contains it.

mod context;
mod history;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use context::{Context, ContextSet, ContextSetName, Range, CONTEXT_FEATURES};
pub use history::History;

use crate::error::{check_len, Result};

pub const NUM_ACTUATORS: usize = 4;
pub const ACT_DIM: usize = NUM_ACTUATORS;
/// velocity (2) + previous action (4) + command (2)
pub const OBS_DIM: usize = 2 + ACT_DIM + 2;

/// Unit push directions of the actuators: +x, −x, +y, −y.
pub const ACTUATOR_DIRECTIONS: [[f64; 2]; NUM_ACTUATORS] =
    [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];

/// Width of the tracking kernel `exp(−‖v − v_cmd‖² / 0.25)`.
pub const TRACKING_SIGMA_SQ: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub dt: f64,
    pub horizon: usize,
    pub action_rate_weight: f64,
    pub velocity_noise: f64,
    pub command_min: f64,
    pub command_max: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            horizon: 200,
            action_rate_weight: 0.01 * 0.02,
            velocity_noise: 0.05,
            command_min: 0.5,
            command_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub velocity: [f64; 2],
    pub prev_action: [f64; ACT_DIM],
    pub command: [f64; 2],
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend_from_slice(&self.velocity);
        v.extend_from_slice(&self.prev_action);
        v.extend_from_slice(&self.command);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// Episode over: horizon reached or the state became non-finite.
    pub done: bool,
    pub failed: bool,
    pub context: Context,
}

/// Per-episode environment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMassEnv {
    pub config: EnvConfig,
    pub context: Context,
    pub velocity: [f64; 2],
    pub prev_action: [f64; ACT_DIM],
    pub command: [f64; 2],
    pub t: usize,
}

impl PointMassEnv {
    pub fn new(config: EnvConfig) -> Self {
        Self {
            config,
            context: Context::nominal(),
            velocity: [0.0; 2],
            prev_action: [0.0; ACT_DIM],
            command: [0.0; 2],
            t: 0,
        }
    }

    /// Starts an episode at rest with a forward command drawn uniformly.
    pub fn reset<R: Rng + ?Sized>(&mut self, context: Context, rng: &mut R) -> Observation {
        self.context = context;
        self.velocity = [0.0; 2];
        self.prev_action = [0.0; ACT_DIM];
        let c = &self.config;
        let vx = if c.command_min == c.command_max {
            c.command_min
        } else {
            rng.random_range(c.command_min..=c.command_max)
        };
        self.command = [vx, 0.0];
        self.t = 0;
        self.observe(rng)
    }

    pub fn observe<R: Rng + ?Sized>(&self, rng: &mut R) -> Observation {
        let noise = self.config.velocity_noise;
        let mut velocity = self.velocity;
        if noise > 0.0 {
            for v in &mut velocity {
                *v += rng.random_range(-noise..=noise);
            }
        }
        Observation {
            velocity,
            prev_action: self.prev_action,
            command: self.command,
        }
    }

    /// Net actuator force for a clipped action under the current context.
    pub fn force(&self, action: &[f64; ACT_DIM]) -> [f64; 2] {
        let c = &self.context;
        let mut f = [0.0; 2];
        for i in 0..NUM_ACTUATORS {
            let drive = if c.frozen_actuator == Some(i) {
                c.actuator_bias[i]
            } else {
                action[i] + c.actuator_bias[i]
            };
            let mag = c.actuator_strength[i] * drive;
            f[0] += mag * ACTUATOR_DIRECTIONS[i][0];
            f[1] += mag * ACTUATOR_DIRECTIONS[i][1];
        }
        f
    }

    /// Advances one control step. `impulse` is an instantaneous velocity
    /// change applied after the actuator update.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        action: &[f64],
        impulse: Option<[f64; 2]>,
        rng: &mut R,
    ) -> Result<StepResult> {
        check_len(ACT_DIM, action.len())?;
        let mut a = [0.0; ACT_DIM];
        for (dst, &src) in a.iter_mut().zip(action) {
            // NaN actions clip to NaN and surface as a failed episode below.
            *dst = src.clamp(-1.0, 1.0);
        }
        let f = self.force(&a);
        let (dt, mass, damping) = (
            self.config.dt,
            self.context.mass_multiple,
            self.context.damping_multiple,
        );
        let imp = impulse.unwrap_or([0.0; 2]);
        for k in 0..2 {
            self.velocity[k] += dt / mass * (f[k] - damping * self.velocity[k]) + imp[k];
        }

        let err2 = (self.velocity[0] - self.command[0]).powi(2)
            + (self.velocity[1] - self.command[1]).powi(2);
        let tracking = (-err2 / TRACKING_SIGMA_SQ).exp();
        let rate: f64 = a
            .iter()
            .zip(&self.prev_action)
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        let mut reward = tracking - self.config.action_rate_weight * rate;
        self.prev_action = a;
        self.t += 1;

        let failed = !(self.velocity.iter().all(|v| v.is_finite()) && reward.is_finite());
        if failed {
            reward = 0.0;
        }
        let done = failed || self.t >= self.config.horizon;
        Ok(StepResult {
            observation: self.observe(rng),
            reward,
            done,
            failed,
            context: self.context,
        })
    }
}
