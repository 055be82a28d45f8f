use serde::{Deserialize, Serialize};

use super::gae;
use crate::error::{check_len, Error, Result};
use crate::netcore::Matrix;

/// How an environment collects data during one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Privileged latent `f(c)`, no adversary.
    Id,
    /// Zero latent, adversary may intervene.
    Ood,
}

/// One environment step as stored in the buffer.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    /// Normalized observation.
    pub obs: &'a [f64],
    pub context: &'a [f64],
    /// Added to `f(c)` when the encoder feeds the policy or critic.
    pub latent_noise: &'a [f64],
    /// Policy latent is `f(c) + noise` when set, zero otherwise.
    pub policy_uses_encoder: bool,
    /// Same switch for the critic's latent input.
    pub critic_uses_encoder: bool,
    pub action: &'a [f64],
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub mode: TrainingMode,
}

/// Fixed-capacity storage for `steps × envs` transitions. Row `t * envs + e`
/// holds step `t` of environment `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    num_envs: usize,
    steps: usize,
    pub obs: Matrix,
    pub context: Matrix,
    pub latent_noise: Matrix,
    pub actions: Matrix,
    pub policy_uses_encoder: Vec<bool>,
    pub critic_uses_encoder: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub modes: Vec<TrainingMode>,
    /// Critic estimate of the state after the last stored step, per env.
    pub last_values: Vec<f64>,
    filled: Vec<bool>,
}

impl RolloutBuffer {
    pub fn new(num_envs: usize, steps: usize, obs_dim: usize, context_dim: usize, latent_dim: usize, act_dim: usize) -> Self {
        let n = num_envs * steps;
        Self {
            num_envs,
            steps,
            obs: Matrix::zeros(n, obs_dim),
            context: Matrix::zeros(n, context_dim),
            latent_noise: Matrix::zeros(n, latent_dim),
            actions: Matrix::zeros(n, act_dim),
            policy_uses_encoder: vec![false; n],
            critic_uses_encoder: vec![false; n],
            log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            values: vec![0.0; n],
            dones: vec![false; n],
            modes: vec![TrainingMode::Id; n],
            last_values: vec![0.0; num_envs],
            filled: vec![false; n],
        }
    }

    pub fn num_envs(&self) -> usize {
        self.num_envs
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.num_envs * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, t: usize, env: usize) -> usize {
        t * self.num_envs + env
    }

    pub fn record(&mut self, t: usize, env: usize, tr: Transition<'_>) -> Result<()> {
        if t >= self.steps || env >= self.num_envs {
            return Err(Error::InvalidArgument(format!("buffer slot ({t}, {env}) out of range")));
        }
        check_len(self.obs.cols(), tr.obs.len())?;
        check_len(self.context.cols(), tr.context.len())?;
        check_len(self.latent_noise.cols(), tr.latent_noise.len())?;
        check_len(self.actions.cols(), tr.action.len())?;
        let i = self.index(t, env);
        self.obs.row_mut(i).copy_from_slice(tr.obs);
        self.context.row_mut(i).copy_from_slice(tr.context);
        self.latent_noise.row_mut(i).copy_from_slice(tr.latent_noise);
        self.actions.row_mut(i).copy_from_slice(tr.action);
        self.policy_uses_encoder[i] = tr.policy_uses_encoder;
        self.critic_uses_encoder[i] = tr.critic_uses_encoder;
        self.log_probs[i] = tr.log_prob;
        self.rewards[i] = tr.reward;
        self.values[i] = tr.value;
        self.dones[i] = tr.done;
        self.modes[i] = tr.mode;
        self.filled[i] = true;
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.filled.iter().all(|&f| f)
    }

    /// Marks every slot empty so the next iteration can refill it.
    pub fn clear(&mut self) {
        self.filled.iter_mut().for_each(|f| *f = false);
    }

    /// GAE advantages and value targets in row order.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.len();
        let mut adv = vec![0.0; n];
        let mut targets = vec![0.0; n];
        let mut r = Vec::with_capacity(self.steps);
        let mut v = Vec::with_capacity(self.steps + 1);
        let mut d = Vec::with_capacity(self.steps);
        for e in 0..self.num_envs {
            r.clear();
            v.clear();
            d.clear();
            for t in 0..self.steps {
                let i = self.index(t, e);
                r.push(self.rewards[i]);
                v.push(self.values[i]);
                d.push(self.dones[i]);
            }
            v.push(self.last_values[e]);
            let (a, tg) = gae(&r, &v, &d, gamma, lambda)?;
            for t in 0..self.steps {
                let i = self.index(t, e);
                adv[i] = a[t];
                targets[i] = tg[t];
            }
        }
        Ok((adv, targets))
    }

    /// Mode of environment `env` for this iteration (constant per env).
    pub fn env_mode(&self, env: usize) -> TrainingMode {
        self.modes[self.index(0, env)]
    }
}
