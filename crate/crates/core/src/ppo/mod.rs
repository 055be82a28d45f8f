//! Clipped-surrogate PPO with GAE and a KL-adaptive learning rate.

mod actor_critic;
mod buffer;

use serde::{Deserialize, Serialize};

pub use actor_critic::{ppo_update, ActorCritic, NetShape, UpdateStats};
pub use buffer::{RolloutBuffer, TrainingMode, Transition};

use crate::error::{check_len, Error, Result};

pub const LR_MIN: f64 = 1e-5;
pub const LR_MAX: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub initial_lr: f64,
    pub target_kl: f64,
    pub max_grad_norm: f64,
    pub total_updates: usize,
    pub num_envs: usize,
    pub steps_per_update: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 1.0,
            epochs: 5,
            minibatches: 4,
            initial_lr: 1e-3,
            target_kl: 0.01,
            max_grad_norm: 1.0,
            total_updates: 1500,
            num_envs: 64,
            steps_per_update: 24,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        let ok = unit(self.gamma)
            && unit(self.gae_lambda)
            && self.clip > 0.0
            && self.entropy_coef >= 0.0
            && self.value_coef >= 0.0
            && self.epochs > 0
            && self.minibatches > 0
            && self.initial_lr > 0.0
            && self.target_kl > 0.0
            && self.max_grad_norm > 0.0
            && self.num_envs > 0
            && self.steps_per_update > 0
            && self.num_envs * self.steps_per_update >= self.minibatches;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid PPO settings: {self:?}")))
        }
    }

    pub fn batch_size(&self) -> usize {
        self.num_envs * self.steps_per_update
    }

    /// Samples per minibatch (the last one absorbs any remainder).
    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.minibatches
    }
}

/// `Σ_t γ^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Generalized advantage estimates and value targets for one environment.
/// `values` carries one extra trailing bootstrap entry.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = rewards.len();
    check_len(t, dones.len())?;
    check_len(t + 1, values.len())?;
    let mut adv = vec![0.0; t];
    let mut next = 0.0;
    for i in (0..t).rev() {
        let live = if dones[i] { 0.0 } else { 1.0 };
        let delta = rewards[i] + gamma * live * values[i + 1] - values[i];
        next = delta + gamma * lambda * live * next;
        adv[i] = next;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Shifts and scales to mean 0, std 1 (population std, `1e-8` floor).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) * scale);
}

/// Value of the clipped surrogate and the number of samples whose ratio was
/// non-finite and therefore left out of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateLoss {
    pub loss: f64,
    pub excluded: usize,
}

/// Largest fraction of excluded samples tolerated in one batch.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

/// Per-sample term `-min(ρA, clip(ρ, 1-ε, 1+ε)A)`.
pub fn surrogate_term(ratio: f64, adv: f64, clip: f64) -> f64 {
    -(ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
}

pub fn clipped_policy_loss(log_new: &[f64], log_old: &[f64], adv: &[f64], clip: f64) -> Result<SurrogateLoss> {
    check_len(log_new.len(), log_old.len())?;
    check_len(log_new.len(), adv.len())?;
    let mut total = 0.0;
    let mut kept = 0usize;
    for ((n, o), a) in log_new.iter().zip(log_old).zip(adv) {
        let ratio = (n - o).exp();
        if !ratio.is_finite() {
            continue;
        }
        total += surrogate_term(ratio, *a, clip);
        kept += 1;
    }
    let excluded = log_new.len() - kept;
    check_excluded(excluded, log_new.len())?;
    Ok(SurrogateLoss {
        loss: if kept == 0 { 0.0 } else { total / kept as f64 },
        excluded,
    })
}

pub(crate) fn check_excluded(excluded: usize, total: usize) -> Result<()> {
    if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
        Err(Error::Divergence(format!(
            "{excluded} of {total} probability ratios were non-finite"
        )))
    } else {
        Ok(())
    }
}

pub fn value_loss(pred: &[f64], targets: &[f64]) -> Result<f64> {
    check_len(pred.len(), targets.len())?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Divide or multiply by 1.5 when the measured KL leaves
/// `[target/2, 2·target]`, then clamp to `[LR_MIN, LR_MAX]`.
pub fn adaptive_lr(lr: f64, kl: f64, target_kl: f64) -> f64 {
    let next = if kl > 2.0 * target_kl {
        lr / 1.5
    } else if kl < 0.5 * target_kl {
        lr * 1.5
    } else {
        lr
    };
    next.clamp(LR_MIN, LR_MAX)
}
