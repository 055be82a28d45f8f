use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{AdversaryConfig, AdversarySchedule, CreditMode};
use crate::envsim::{ContextSet, ContextSetName, EnvConfig, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::ppo::{NetShape, PpoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gram,
    Contextual,
    Robust,
    Dr,
    DrPrivilegedCritic,
    ContextualNoise,
    GramSeparate,
    ModularSwitch,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Gram,
        Algorithm::Contextual,
        Algorithm::Robust,
        Algorithm::Dr,
        Algorithm::DrPrivilegedCritic,
        Algorithm::ContextualNoise,
        Algorithm::GramSeparate,
        Algorithm::ModularSwitch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gram => "gram",
            Algorithm::Contextual => "contextual",
            Algorithm::Robust => "robust",
            Algorithm::Dr => "dr",
            Algorithm::DrPrivilegedCritic => "dr_privileged_critic",
            Algorithm::ContextualNoise => "contextual_noise",
            Algorithm::GramSeparate => "gram_separate",
            Algorithm::ModularSwitch => "modular_switch",
        }
    }

    /// Mode schedule used when the config leaves it on `auto`.
    pub fn default_modes(self) -> ModeSchedule {
        match self {
            Algorithm::Gram => ModeSchedule::Alternating,
            Algorithm::GramSeparate => ModeSchedule::Separate,
            Algorithm::Robust => ModeSchedule::AllOod,
            Algorithm::Contextual
            | Algorithm::ContextualNoise
            | Algorithm::Dr
            | Algorithm::DrPrivilegedCritic
            | Algorithm::ModularSwitch => ModeSchedule::AllId,
        }
    }

    /// Whether ID-mode policy inputs carry the privileged latent.
    pub fn policy_sees_context(self) -> bool {
        !matches!(self, Algorithm::Robust | Algorithm::Dr | Algorithm::DrPrivilegedCritic)
    }

    pub fn critic_sees_context(self) -> bool {
        self.policy_sees_context() || self == Algorithm::DrPrivilegedCritic
    }

    pub fn default_adversary(self) -> bool {
        matches!(self, Algorithm::Gram | Algorithm::GramSeparate | Algorithm::Robust)
    }

    /// Trains an adaptation module after the RL phase.
    pub fn has_adapter(self) -> bool {
        self.policy_sees_context()
    }

    /// The adapter carries an epinet and is calibrated.
    pub fn uses_epinet(self) -> bool {
        matches!(self, Algorithm::Gram | Algorithm::GramSeparate | Algorithm::ModularSwitch)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Per-iteration ID/OOD assignment rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSchedule {
    Alternating,
    Separate,
    AllId,
    AllOod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switch {
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModesSetting {
    Auto,
    Alternating,
    Separate,
    AllId,
    AllOod,
}

/// Flat experiment configuration. Every key has a default, so an empty file
/// is a valid GRAM run at desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub context_set: ContextSetName,
    pub seed: u64,
    pub modes: ModesSetting,
    pub adversary: Switch,

    pub num_envs: usize,
    pub rl_updates: usize,
    pub steps_per_update: usize,
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
    /// Adds `γ·V(s_T)` to the reward of steps that end by time limit.
    pub timeout_bootstrap: bool,

    pub latent_dim: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub log_std_init: f64,
    pub latent_noise_std: f64,

    pub history_len: usize,
    pub base_hidden: Vec<usize>,
    pub epinet_hidden: Vec<usize>,
    pub index_dim: usize,
    pub epinet_samples: usize,
    pub supervised_updates: usize,
    pub supervised_lr: f64,
    pub supervised_minibatches: usize,
    pub supervised_epochs: usize,

    pub calibration_samples: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub alpha_at_max: f64,
    pub switch_threshold: f64,

    pub intervention_prob: f64,
    pub max_impulse: f64,
    pub adversary_update_ratio: usize,
    pub adversary_credit: CreditMode,
    pub adversary_hidden: Vec<usize>,
    pub adversary_lr: f64,
    pub adversary_epochs: usize,
    pub adversary_entropy_coef: f64,

    pub dt: f64,
    pub horizon: usize,
    pub action_rate_weight: f64,
    pub velocity_noise: f64,
    pub command_min: f64,
    pub command_max: f64,

    /// Updates between rolling checkpoints (0 disables them).
    pub checkpoint_interval: usize,
    /// Keep every rolling checkpoint under its own name.
    pub keep_checkpoints: bool,
    pub max_restores: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        let adv = AdversaryConfig::default();
        let env = EnvConfig::default();
        Self {
            algorithm: Algorithm::Gram,
            context_set: ContextSetName::BaseId,
            seed: 0,
            modes: ModesSetting::Auto,
            adversary: Switch::Auto,
            num_envs: ppo.num_envs,
            rl_updates: 2000,
            steps_per_update: ppo.steps_per_update,
            gamma: ppo.gamma,
            gae_lambda: ppo.gae_lambda,
            clip: ppo.clip,
            entropy_coef: ppo.entropy_coef,
            value_coef: ppo.value_coef,
            epochs: ppo.epochs,
            minibatches: ppo.minibatches,
            initial_lr: ppo.initial_lr,
            target_kl: ppo.target_kl,
            max_grad_norm: ppo.max_grad_norm,
            timeout_bootstrap: true,
            latent_dim: 8,
            policy_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            encoder_hidden: vec![32, 32],
            log_std_init: 0.0,
            latent_noise_std: 0.25,
            history_len: 16,
            base_hidden: vec![64, 64],
            epinet_hidden: vec![16, 16],
            index_dim: 8,
            epinet_samples: 8,
            supervised_updates: 1000,
            supervised_lr: 1e-3,
            supervised_minibatches: 4,
            supervised_epochs: 5,
            calibration_samples: 10_000,
            u_min: 0.90,
            u_max: 0.99,
            alpha_at_max: 0.01,
            switch_threshold: 0.5,
            intervention_prob: adv.intervention_prob,
            max_impulse: adv.max_magnitude,
            adversary_update_ratio: adv.update_ratio,
            adversary_credit: adv.credit,
            adversary_hidden: adv.hidden,
            adversary_lr: adv.lr,
            adversary_epochs: adv.epochs,
            adversary_entropy_coef: adv.entropy_coef,
            dt: env.dt,
            horizon: env.horizon,
            action_rate_weight: env.action_rate_weight,
            velocity_noise: env.velocity_noise,
            command_min: env.command_min,
            command_max: env.command_max,
            checkpoint_interval: 100,
            keep_checkpoints: false,
            max_restores: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo().validate()?;
        self.adversary_config().validate()?;
        let mut problems = Vec::new();
        let mut need = |ok: bool, what: &str| {
            if !ok {
                problems.push(what.to_string());
            }
        };
        need(self.rl_updates > 0, "rl_updates must be positive");
        need(self.latent_dim > 0, "latent_dim must be positive");
        need(self.history_len > 0, "history_len must be positive");
        need(self.index_dim > 0, "index_dim must be positive");
        need(self.epinet_samples >= 2, "epinet_samples must be at least 2");
        need(self.supervised_lr > 0.0, "supervised_lr must be positive");
        need(self.supervised_minibatches > 0, "supervised_minibatches must be positive");
        need(self.supervised_epochs > 0, "supervised_epochs must be positive");
        need(
            0.0 < self.u_min && self.u_min < self.u_max && self.u_max <= 1.0,
            "quantiles must satisfy 0 < u_min < u_max <= 1",
        );
        need(
            self.alpha_at_max > 0.0 && self.alpha_at_max < 1.0,
            "alpha_at_max must lie in (0, 1)",
        );
        need(
            (0.0..=1.0).contains(&self.switch_threshold),
            "switch_threshold must lie in [0, 1]",
        );
        need(self.latent_noise_std >= 0.0, "latent_noise_std must be non-negative");
        need(self.dt > 0.0 && self.horizon > 0, "dt and horizon must be positive");
        need(
            0.0 <= self.command_min && self.command_min <= self.command_max,
            "command range must be ordered and non-negative",
        );
        need(self.velocity_noise >= 0.0, "velocity_noise must be non-negative");
        need(
            self.modes != ModesSetting::Separate || self.num_envs >= 2,
            "separate collection needs at least two environments",
        );
        let nonzero = |v: &[usize]| v.iter().all(|&w| w > 0);
        need(
            nonzero(&self.policy_hidden)
                && nonzero(&self.critic_hidden)
                && nonzero(&self.encoder_hidden)
                && nonzero(&self.base_hidden)
                && nonzero(&self.epinet_hidden)
                && nonzero(&self.adversary_hidden),
            "hidden widths must be positive",
        );
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip: self.clip,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            epochs: self.epochs,
            minibatches: self.minibatches,
            initial_lr: self.initial_lr,
            target_kl: self.target_kl,
            max_grad_norm: self.max_grad_norm,
            total_updates: self.rl_updates,
            num_envs: self.num_envs,
            steps_per_update: self.steps_per_update,
        }
    }

    pub fn adversary_config(&self) -> AdversaryConfig {
        AdversaryConfig {
            intervention_prob: self.intervention_prob,
            max_magnitude: self.max_impulse,
            update_ratio: self.adversary_update_ratio,
            credit: self.adversary_credit,
            hidden: self.adversary_hidden.clone(),
            lr: self.adversary_lr,
            epochs: self.adversary_epochs,
            entropy_coef: self.adversary_entropy_coef,
            ..AdversaryConfig::default()
        }
    }

    pub fn schedule(&self) -> AdversarySchedule {
        AdversarySchedule {
            intervention_prob: self.intervention_prob,
            max_magnitude: self.max_impulse,
            total_updates: self.rl_updates,
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            dt: self.dt,
            horizon: self.horizon,
            action_rate_weight: self.action_rate_weight,
            velocity_noise: self.velocity_noise,
            command_min: self.command_min,
            command_max: self.command_max,
        }
    }

    pub fn context_set(&self) -> ContextSet {
        ContextSet::named(self.context_set)
    }

    pub fn net_shape(&self) -> NetShape {
        NetShape {
            obs_dim: OBS_DIM,
            act_dim: ACT_DIM,
            latent_dim: self.latent_dim,
            policy_hidden: self.policy_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            encoder_hidden: self.encoder_hidden.clone(),
            log_std_init: self.log_std_init,
        }
    }

    pub fn mode_schedule(&self) -> ModeSchedule {
        match self.modes {
            ModesSetting::Auto => self.algorithm.default_modes(),
            ModesSetting::Alternating => ModeSchedule::Alternating,
            ModesSetting::Separate => ModeSchedule::Separate,
            ModesSetting::AllId => ModeSchedule::AllId,
            ModesSetting::AllOod => ModeSchedule::AllOod,
        }
    }

    pub fn adversary_enabled(&self) -> bool {
        match self.adversary {
            Switch::Auto => self.algorithm.default_adversary(),
            Switch::On => true,
            Switch::Off => false,
        }
    }

    /// Latent noise added to the privileged latent during RL.
    pub fn training_noise_std(&self) -> f64 {
        if self.algorithm == Algorithm::ContextualNoise {
            self.latent_noise_std
        } else {
            0.0
        }
    }

    pub fn history_dim(&self) -> usize {
        self.history_len * (OBS_DIM + ACT_DIM)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default_gram() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.mode_schedule(), ModeSchedule::Alternating);
        assert!(c.adversary_enabled());
        assert_eq!(c.history_dim(), 192);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::for_algorithm(Algorithm::ContextualNoise);
        c.policy_hidden = vec![32, 16];
        c.seed = 7;
        let s = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&s).unwrap(), c);
        assert_eq!(c.training_noise_std(), 0.25);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_toml_str("nope = 1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("u_min = 0.99\nu_max = 0.9"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("algorithm = \"ppo\""), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("epinet_samples = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn algorithm_wiring() {
        use Algorithm::*;
        assert_eq!(Robust.default_modes(), ModeSchedule::AllOod);
        assert!(!Robust.policy_sees_context() && Robust.default_adversary());
        assert!(!Contextual.default_adversary());
        assert!(DrPrivilegedCritic.critic_sees_context() && !DrPrivilegedCritic.policy_sees_context());
        assert!(!Dr.critic_sees_context());
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
