use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::adversary::{maybe_intervene, AdversaryPolicy, AdversarySchedule, InterventionBuffer};
use crate::envsim::{Context, ContextSet, EnvConfig, History, PointMassEnv, ACT_DIM, CONTEXT_FEATURES, OBS_DIM};
use crate::error::Result;
use crate::netcore::Matrix;
use crate::ppo::{ActorCritic, RolloutBuffer, TrainingMode, Transition};
use crate::rng::{self, stream, Rng};

/// Where episode contexts come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ContextSource {
    /// Uniform over a training set.
    Set(ContextSet),
    /// Fixed frozen actuator and, if given, mass multiple; everything else
    /// drawn from the given set's ranges.
    Cell {
        base: ContextSet,
        mass_multiple: Option<f64>,
        frozen_actuator: Option<usize>,
    },
}

impl ContextSource {
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Context {
        match self {
            ContextSource::Set(set) => set.sample(rng),
            ContextSource::Cell {
                base,
                mass_multiple,
                frozen_actuator,
            } => {
                let mut c = base.sample(rng);
                if let Some(m) = mass_multiple {
                    c.mass_multiple = *m;
                }
                c.frozen_actuator = *frozen_actuator;
                c
            }
        }
    }
}

/// Outcome of one environment step as seen by the collectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub failed: bool,
    /// Ended by the time limit rather than failure.
    pub timeout: bool,
}

/// A batch of environments with their histories and private random streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecEnv {
    pub envs: Vec<PointMassEnv>,
    pub histories: Vec<History>,
    /// Current raw observation of every environment, one per row.
    pub obs: Matrix,
    pub episode_return: Vec<f64>,
    pub source: ContextSource,
    dyn_rngs: Vec<Rng>,
    act_rngs: Vec<Rng>,
    adv_rngs: Vec<Rng>,
    latent_rngs: Vec<Rng>,
}

impl VecEnv {
    /// `offset` selects a disjoint family of streams (phase and slot).
    pub fn new(env: &EnvConfig, n: usize, source: ContextSource, history_len: usize, seed: u64, offset: u64) -> Self {
        let mk = |base: u64| -> Vec<Rng> { (0..n as u64).map(|i| rng::stream(seed, offset + base + i)).collect() };
        let mut v = Self {
            envs: vec![PointMassEnv::new(env.clone()); n],
            histories: vec![History::new(history_len, OBS_DIM, ACT_DIM); n],
            obs: Matrix::zeros(n, OBS_DIM),
            episode_return: vec![0.0; n],
            source,
            dyn_rngs: mk(stream::ENV_DYNAMICS),
            act_rngs: mk(stream::ENV_ACTIONS),
            adv_rngs: mk(stream::ENV_ADVERSARY),
            latent_rngs: mk(stream::ENV_LATENT),
        };
        for i in 0..n {
            v.reset(i);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn reset(&mut self, i: usize) {
        let c = self.source.sample(&mut self.dyn_rngs[i]);
        let o = self.envs[i].reset(c, &mut self.dyn_rngs[i]);
        self.obs.row_mut(i).copy_from_slice(&o.to_vec());
        self.histories[i].clear();
        self.episode_return[i] = 0.0;
    }

    pub fn context_features(&self) -> Matrix {
        Matrix::from_rows(&self.envs.iter().map(|e| e.context.features()).collect::<Vec<_>>())
    }

    pub fn history_matrix(&self, rows: &[usize]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|&i| self.histories[i].as_slice()).collect::<Vec<_>>())
    }

    pub fn action_rng(&mut self, i: usize) -> &mut Rng {
        &mut self.act_rngs[i]
    }

    pub fn adversary_rng(&mut self, i: usize) -> &mut Rng {
        &mut self.adv_rngs[i]
    }

    pub fn latent_rng(&mut self, i: usize) -> &mut Rng {
        &mut self.latent_rngs[i]
    }

    /// Steps environment `i`, appends `(obs_t, clipped a_t)` to its history
    /// and stores the next observation. Does not reset.
    pub fn step(&mut self, i: usize, action: &[f64], impulse: Option<[f64; 2]>) -> Result<StepOutcome> {
        let clipped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let prev = self.obs.row(i).to_vec();
        let r = self.envs[i].step(action, impulse, &mut self.dyn_rngs[i])?;
        self.histories[i].push(&prev, &clipped)?;
        self.obs.row_mut(i).copy_from_slice(&r.observation.to_vec());
        self.episode_return[i] += r.reward;
        Ok(StepOutcome {
            reward: r.reward,
            done: r.done,
            failed: r.failed,
            timeout: r.done && !r.failed,
        })
    }
}

/// Latent noise rows: `σ·ε` where the encoder feeds the policy, else zero.
fn draw_noise(venv: &mut VecEnv, uses: &[bool], std: f64, latent_dim: usize) -> Matrix {
    let mut m = Matrix::zeros(uses.len(), latent_dim);
    if std > 0.0 {
        for (i, &u) in uses.iter().enumerate() {
            if u {
                let rng = venv.latent_rng(i);
                for v in m.row_mut(i) {
                    *v = std * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    m
}

/// Per-iteration collection summary.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RolloutStats {
    pub id_reward: f64,
    pub id_steps: usize,
    pub ood_reward: f64,
    pub ood_steps: usize,
    pub episodes: usize,
    pub episode_return_sum: f64,
    pub interventions: usize,
    pub impulse_sum: f64,
}

impl RolloutStats {
    /// Mean per-step reward scaled to an episode, per mode (`NaN`-free: 0
    /// when the mode collected nothing).
    pub fn mode_return(&self, mode: TrainingMode, horizon: usize) -> f64 {
        let (sum, n) = match mode {
            TrainingMode::Id => (self.id_reward, self.id_steps),
            TrainingMode::Ood => (self.ood_reward, self.ood_steps),
        };
        if n == 0 {
            0.0
        } else {
            sum / n as f64 * horizon as f64
        }
    }

    pub fn mean_impulse(&self) -> f64 {
        if self.interventions == 0 {
            0.0
        } else {
            self.impulse_sum / self.interventions as f64
        }
    }
}

/// Adversary pieces borrowed for one collection.
pub struct AdversaryHandle<'a> {
    pub policy: &'a AdversaryPolicy,
    pub buffer: &'a mut InterventionBuffer,
    pub schedule: AdversarySchedule,
    pub update: usize,
}

/// Fills `buf` with one iteration of teacher data. ID environments act on
/// the privileged latent, OOD environments on the zero latent with the
/// adversary (if any) intervening.
pub fn collect_rollouts(
    venv: &mut VecEnv,
    ac: &mut ActorCritic,
    modes: &[TrainingMode],
    buf: &mut RolloutBuffer,
    cfg: &ExperimentConfig,
    mut adversary: Option<AdversaryHandle<'_>>,
) -> Result<RolloutStats> {
    let n = venv.len();
    let d = ac.latent_dim();
    let alg = cfg.algorithm;
    let noise_std = cfg.training_noise_std();
    let use_p: Vec<bool> = modes.iter().map(|&m| m == TrainingMode::Id && alg.policy_sees_context()).collect();
    let use_c: Vec<bool> = modes.iter().map(|&m| m == TrainingMode::Id && alg.critic_sees_context()).collect();
    let mut stats = RolloutStats::default();
    buf.clear();

    for t in 0..buf.steps() {
        ac.normalizer.update(&venv.obs)?;
        let obs_n = ac.normalizer.normalize_batch(&venv.obs)?;
        let ctx = venv.context_features();
        let noise = draw_noise(venv, &use_p, noise_std, d);
        let zp = ac.latents(&ctx, &noise, &use_p)?;
        let zc = ac.latents(&ctx, &noise, &use_c)?;
        let means = ac.action_means(&obs_n, &zp)?;
        let values = ac.values(&obs_n, &zc)?;

        let mut actions = Matrix::zeros(n, ac.act_dim());
        let mut log_probs = vec![0.0; n];
        let mut outcomes = Vec::with_capacity(n);
        for i in 0..n {
            let a = ac.policy.sample(means.row(i), venv.action_rng(i));
            log_probs[i] = ac.policy.log_prob(means.row(i), &a);
            actions.row_mut(i).copy_from_slice(&a);

            let mut impulse = None;
            if let Some(h) = adversary.as_mut() {
                if modes[i] == TrainingMode::Ood {
                    if let Some(iv) = maybe_intervene(obs_n.row(i), &h.schedule, h.policy, h.update, venv.adversary_rng(i))? {
                        h.buffer.open(i, obs_n.row(i), &iv);
                        stats.interventions += 1;
                        stats.impulse_sum += iv.magnitude;
                        impulse = Some(iv.impulse);
                    }
                }
            }
            let out = venv.step(i, &a, impulse)?;
            if let Some(h) = adversary.as_mut() {
                h.buffer.credit(i, out.reward);
            }
            match modes[i] {
                TrainingMode::Id => {
                    stats.id_reward += out.reward;
                    stats.id_steps += 1;
                }
                TrainingMode::Ood => {
                    stats.ood_reward += out.reward;
                    stats.ood_steps += 1;
                }
            }
            outcomes.push(out);
        }

        // time-limit bootstrap on the terminal observation
        let mut rewards: Vec<f64> = outcomes.iter().map(|o| o.reward).collect();
        if cfg.timeout_bootstrap {
            let ended: Vec<usize> = (0..n).filter(|&i| outcomes[i].timeout).collect();
            if !ended.is_empty() {
                let term = ac.normalizer.normalize_batch(&venv.obs.gather_rows(&ended))?;
                let v = ac.values(&term, &zc.gather_rows(&ended))?;
                for (k, &i) in ended.iter().enumerate() {
                    rewards[i] += cfg.gamma * v[k];
                }
            }
        }

        for i in 0..n {
            buf.record(
                t,
                i,
                Transition {
                    obs: obs_n.row(i),
                    context: ctx.row(i),
                    latent_noise: noise.row(i),
                    policy_uses_encoder: use_p[i],
                    critic_uses_encoder: use_c[i],
                    action: actions.row(i),
                    log_prob: log_probs[i],
                    reward: rewards[i],
                    value: values[i],
                    done: outcomes[i].done,
                    mode: modes[i],
                },
            )?;
            if outcomes[i].done {
                if let Some(h) = adversary.as_mut() {
                    h.buffer.close(i);
                }
                stats.episodes += 1;
                stats.episode_return_sum += venv.episode_return[i];
                venv.reset(i);
            }
        }
    }

    let obs_n = ac.normalizer.normalize_batch(&venv.obs)?;
    let ctx = venv.context_features();
    let zc = ac.latents(&ctx, &Matrix::zeros(n, d), &use_c)?;
    buf.last_values = ac.values(&obs_n, &zc)?;
    debug_assert_eq!(ctx.cols(), CONTEXT_FEATURES);
    Ok(stats)
}
