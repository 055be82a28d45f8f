use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::modes::assign_modes;
use super::rollout::{collect_rollouts, AdversaryHandle, ContextSource, VecEnv};
use crate::adversary::{adversary_update, AdversaryPolicy, InterventionBuffer, UpdateCadence};
use crate::envsim::{ACT_DIM, CONTEXT_FEATURES, OBS_DIM};
use crate::error::{Error, Result};
use crate::netcore::Adam;
use crate::ppo::{ppo_update, ActorCritic, RolloutBuffer, TrainingMode};
use crate::rng::{self, stream, Rng};

/// One row of the training log. Supervised rows leave the RL columns at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub phase: String,
    pub update: usize,
    pub id_return: f64,
    pub ood_return: f64,
    pub episode_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub lr: f64,
    pub adversary_magnitude: f64,
    pub mean_impulse: f64,
    pub interventions: usize,
    pub adversary_updated: bool,
    pub encoder_loss: f64,
}

impl LogRow {
    pub fn empty(phase: &str, update: usize) -> Self {
        Self {
            phase: phase.to_string(),
            update,
            id_return: 0.0,
            ood_return: 0.0,
            episode_return: 0.0,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            kl: 0.0,
            lr: 0.0,
            adversary_magnitude: 0.0,
            mean_impulse: 0.0,
            interventions: 0,
            adversary_updated: false,
            encoder_loss: 0.0,
        }
    }
}

/// Everything the RL phase mutates, so a checkpoint can resume it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlState {
    /// Completed PPO updates.
    pub update: usize,
    pub ac: ActorCritic,
    pub opt: Adam,
    pub adversary: AdversaryPolicy,
    pub adversary_opt: Adam,
    pub interventions: InterventionBuffer,
    pub cadence: UpdateCadence,
    pub venv: VecEnv,
    pub ppo_rng: Rng,
    pub adversary_rng: Rng,
    pub restores: usize,
}

impl RlState {
    /// `offset` separates the stream family of an auxiliary run.
    pub fn new(cfg: &ExperimentConfig, offset: u64) -> Result<Self> {
        let seed = cfg.seed;
        let ac = ActorCritic::with_stream_offset(&cfg.net_shape(), seed, offset)?;
        let opt = ac.new_optimizer(cfg.initial_lr);
        let adv_cfg = cfg.adversary_config();
        let adversary = AdversaryPolicy::new(
            OBS_DIM,
            &adv_cfg.hidden,
            adv_cfg.log_std_init,
            &mut rng::stream(seed, offset + stream::ADVERSARY_INIT),
        )?;
        let adversary_opt = Adam::new(adv_cfg.lr, &[adversary.policy.mean.num_params(), 1]);
        let venv = VecEnv::new(
            &cfg.env(),
            cfg.num_envs,
            ContextSource::Set(cfg.context_set()),
            cfg.history_len,
            seed,
            offset + stream::PHASE_RL,
        );
        Ok(Self {
            update: 0,
            ac,
            opt,
            adversary,
            adversary_opt,
            interventions: InterventionBuffer::new(cfg.num_envs, adv_cfg.credit),
            cadence: UpdateCadence::default(),
            venv,
            ppo_rng: rng::stream(seed, offset + stream::PPO_UPDATE),
            adversary_rng: rng::stream(seed, offset + stream::ADVERSARY_UPDATE),
            restores: 0,
        })
    }

    pub fn new_buffer(cfg: &ExperimentConfig) -> RolloutBuffer {
        RolloutBuffer::new(cfg.num_envs, cfg.steps_per_update, OBS_DIM, CONTEXT_FEATURES, cfg.latent_dim, ACT_DIM)
    }
}

/// Assign modes, collect, update the protagonist, then the adversary when due.
pub fn rl_iteration(state: &mut RlState, cfg: &ExperimentConfig, buf: &mut RolloutBuffer) -> Result<LogRow> {
    let modes = assign_modes(cfg.mode_schedule(), state.update, cfg.num_envs);
    let adv_on = cfg.adversary_enabled();
    let schedule = cfg.schedule();
    let cap = schedule.magnitude_cap(state.update);
    let handle = adv_on.then_some(AdversaryHandle {
        policy: &state.adversary,
        buffer: &mut state.interventions,
        schedule,
        update: state.update,
    });
    let rs = collect_rollouts(&mut state.venv, &mut state.ac, &modes, buf, cfg, handle)?;
    let us = ppo_update(&mut state.ac, &mut state.opt, buf, &cfg.ppo(), &mut state.ppo_rng)?;
    state.update += 1;

    let mut adversary_updated = false;
    if adv_on && state.cadence.tick(cfg.adversary_update_ratio) {
        let updated = adversary_update(
            &mut state.adversary,
            &mut state.adversary_opt,
            &mut state.interventions,
            &cfg.adversary_config(),
            &mut state.adversary_rng,
        )?;
        if updated.is_some() {
            state.cadence.reset();
            adversary_updated = true;
        }
    }

    Ok(LogRow {
        id_return: rs.mode_return(TrainingMode::Id, cfg.horizon),
        ood_return: rs.mode_return(TrainingMode::Ood, cfg.horizon),
        episode_return: if rs.episodes == 0 {
            0.0
        } else {
            rs.episode_return_sum / rs.episodes as f64
        },
        policy_loss: us.policy_loss,
        value_loss: us.value_loss,
        entropy: us.entropy,
        kl: us.kl,
        lr: us.lr,
        adversary_magnitude: if adv_on { cap } else { 0.0 },
        mean_impulse: rs.mean_impulse(),
        interventions: rs.interventions,
        adversary_updated,
        ..LogRow::empty("rl", state.update)
    })
}

/// Runs RL iterations until `cfg.rl_updates`. On divergence the last
/// snapshot is restored with a halved learning rate; more than
/// `max_restores` restores abort the run. `on_snapshot` fires every
/// `checkpoint_interval` updates with the state and log so far.
pub fn rl_phase(
    state: &mut RlState,
    log: &mut Vec<LogRow>,
    cfg: &ExperimentConfig,
    phase: &str,
    on_snapshot: &mut dyn FnMut(&RlState, &[LogRow]) -> Result<()>,
) -> Result<()> {
    let mut buf = RlState::new_buffer(cfg);
    let mut snapshot = (state.clone(), log.len());
    while state.update < cfg.rl_updates {
        match rl_iteration(state, cfg, &mut buf) {
            Ok(mut row) => {
                row.phase = phase.to_string();
                log.push(row);
                if cfg.checkpoint_interval > 0 && state.update.is_multiple_of(cfg.checkpoint_interval) {
                    snapshot = (state.clone(), log.len());
                    on_snapshot(state, log)?;
                }
            }
            Err(Error::Divergence(msg)) => {
                let restores = state.restores + 1;
                if restores > cfg.max_restores {
                    return Err(Error::Divergence(format!(
                        "{msg}; giving up after {} restores at update {}",
                        cfg.max_restores, state.update
                    )));
                }
                *state = snapshot.0.clone();
                log.truncate(snapshot.1);
                state.opt.lr /= 2.0;
                state.restores = restores;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}
