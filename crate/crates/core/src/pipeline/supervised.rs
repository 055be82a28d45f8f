use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::modes::assign_modes;
use super::rollout::{ContextSource, VecEnv};
use super::train::LogRow;
use crate::encoders::{finetune_alpha, AdapterGrads, AlphaParams, EpinetAdapter};
use crate::error::{Error, Result};
use crate::netcore::{clip_global_norm, Adam, Matrix};
use crate::ppo::{ActorCritic, TrainingMode};
use crate::rng::{self, stream, Rng};

/// Latent mean and uncertainty of one history.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub mean: Vec<f64>,
    pub uncertainty: f64,
}

/// Number of index draws per history: one for a point adapter.
pub fn sample_count(adapter: &EpinetAdapter, cfg: &ExperimentConfig) -> usize {
    if adapter.epinet.is_some() {
        cfg.epinet_samples
    } else {
        1
    }
}

/// Estimates for the histories of `rows`, each drawing its indices from that
/// environment's latent stream.
pub fn estimate_rows(adapter: &EpinetAdapter, venv: &mut VecEnv, rows: &[usize], n: usize) -> Result<Vec<Estimate>> {
    let hists = venv.history_matrix(rows);
    if adapter.epinet.is_none() {
        let out = adapter.base.forward_batch(&hists)?;
        return Ok((0..rows.len())
            .map(|r| Estimate {
                mean: out.row(r).to_vec(),
                uncertainty: 0.0,
            })
            .collect());
    }
    let m = adapter.index_dim();
    let mut xi = Matrix::zeros(rows.len() * n, m);
    for (b, &i) in rows.iter().enumerate() {
        let draws = adapter.sample_indices(n, venv.latent_rng(i));
        for k in 0..n {
            xi.row_mut(b * n + k).copy_from_slice(draws.row(k));
        }
    }
    Ok(adapter
        .stats_batch(&hists, &xi, n)?
        .into_iter()
        .map(|s| Estimate {
            mean: s.mean,
            uncertainty: s.uncertainty,
        })
        .collect())
}

/// Builds the adapter for `cfg`: an epinet adapter, or a point adapter for
/// the contextual teacher-student baselines.
pub fn new_adapter(cfg: &ExperimentConfig) -> Result<EpinetAdapter> {
    let seed = cfg.seed;
    let epinet = cfg
        .algorithm
        .uses_epinet()
        .then_some((cfg.epinet_hidden.as_slice(), cfg.index_dim));
    EpinetAdapter::new(
        cfg.history_dim(),
        &cfg.base_hidden,
        cfg.latent_dim,
        epinet,
        &mut rng::stream(seed, stream::BASE_INIT),
        &mut rng::stream(seed, stream::EPINET_LEARNABLE_INIT),
        &mut rng::stream(seed, stream::EPINET_PRIOR_INIT),
    )
}

fn adapter_optimizer(adapter: &EpinetAdapter, lr: f64) -> Adam {
    let learnable = adapter.epinet.as_ref().map_or(0, |e| e.learnable().num_params());
    Adam::new(lr, &[adapter.base.num_params(), learnable])
}

/// Everything the supervised phase mutates. The teacher is read-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedState {
    pub update: usize,
    pub adapter: EpinetAdapter,
    pub opt: Adam,
    pub venv: VecEnv,
    pub rng: Rng,
}

impl SupervisedState {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let adapter = new_adapter(cfg)?;
        let opt = adapter_optimizer(&adapter, cfg.supervised_lr);
        Ok(Self {
            update: 0,
            adapter,
            opt,
            venv: VecEnv::new(
                &cfg.env(),
                cfg.num_envs,
                ContextSource::Set(cfg.context_set()),
                cfg.history_len,
                cfg.seed,
                stream::PHASE_SUPERVISED,
            ),
            rng: rng::stream(cfg.seed, stream::SUPERVISED_UPDATE),
        })
    }
}

/// Regression pairs gathered in one iteration.
struct Dataset {
    histories: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

/// Rolls out the student on ID environments (latent `μ̂(h)`) and the robust
/// teacher on OOD environments (`z_rob`), then fits the adapter to the
/// privileged latents of the ID samples.
pub fn supervised_iteration(state: &mut SupervisedState, teacher: &ActorCritic, cfg: &ExperimentConfig) -> Result<LogRow> {
    let modes = assign_modes(cfg.mode_schedule(), state.update, cfg.num_envs);
    let id_rows: Vec<usize> = (0..cfg.num_envs).filter(|&i| modes[i] == TrainingMode::Id).collect();
    let n = sample_count(&state.adapter, cfg);
    let d = cfg.latent_dim;
    let mut data = Dataset {
        histories: Vec::new(),
        targets: Vec::new(),
    };
    let (mut id_reward, mut ood_reward) = (0.0, 0.0);

    for _ in 0..cfg.steps_per_update {
        let venv = &mut state.venv;
        let obs_n = teacher.normalizer.normalize_batch(&venv.obs)?;
        let mut z = Matrix::zeros(venv.len(), d);
        if !id_rows.is_empty() {
            let est = estimate_rows(&state.adapter, venv, &id_rows, n)?;
            let ctx = venv.context_features().gather_rows(&id_rows);
            let targets = teacher.encoder.encode_batch(&ctx)?;
            for (k, &i) in id_rows.iter().enumerate() {
                z.row_mut(i).copy_from_slice(&est[k].mean);
                data.histories.push(venv.histories[i].as_slice().to_vec());
                data.targets.push(targets.row(k).to_vec());
            }
        }
        let means = teacher.action_means(&obs_n, &z)?;
        for i in 0..venv.len() {
            let a = teacher.policy.sample(means.row(i), venv.action_rng(i));
            let out = venv.step(i, &a, None)?;
            match modes[i] {
                TrainingMode::Id => id_reward += out.reward,
                TrainingMode::Ood => ood_reward += out.reward,
            }
            if out.done {
                venv.reset(i);
            }
        }
    }

    let loss = fit(state, &data, n, cfg)?;
    state.update += 1;
    let per_env = |sum: f64, envs: usize| {
        if envs == 0 {
            0.0
        } else {
            sum / (envs * cfg.steps_per_update) as f64 * cfg.horizon as f64
        }
    };
    Ok(LogRow {
        id_return: per_env(id_reward, id_rows.len()),
        ood_return: per_env(ood_reward, cfg.num_envs - id_rows.len()),
        lr: state.opt.lr,
        encoder_loss: loss,
        ..LogRow::empty("supervised", state.update)
    })
}

/// Minibatch passes over the iteration's dataset; returns the mean loss.
fn fit(state: &mut SupervisedState, data: &Dataset, n: usize, cfg: &ExperimentConfig) -> Result<f64> {
    let total = data.histories.len();
    if total == 0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    for _ in 0..cfg.supervised_epochs {
        order.shuffle(&mut state.rng);
        for mb in 0..cfg.supervised_minibatches {
            let idx = &order[mb * total / cfg.supervised_minibatches..(mb + 1) * total / cfg.supervised_minibatches];
            if idx.is_empty() {
                continue;
            }
            let hists = Matrix::from_rows(&idx.iter().map(|&i| &data.histories[i]).collect::<Vec<_>>());
            let targets = Matrix::from_rows(&idx.iter().map(|&i| &data.targets[i]).collect::<Vec<_>>());
            let xi = state.adapter.sample_indices(idx.len() * n, &mut state.rng);
            let mut grads = AdapterGrads::zeros_like(&state.adapter);
            let loss = state.adapter.loss_and_grads(&hists, &targets, &xi, n, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "encoder loss {loss} at supervised update {} minibatch {mb}",
                    state.update
                )));
            }
            clip_global_norm(&mut [&mut grads.base, &mut grads.learnable], cfg.max_grad_norm);
            let adapter = &mut state.adapter;
            let mut learnable_empty: [f64; 0] = [];
            let learnable = match adapter.epinet.as_mut() {
                Some(e) => e.learnable_mut().params_mut(),
                None => &mut learnable_empty[..],
            };
            state
                .opt
                .step(&mut [adapter.base.params_mut(), learnable], &[&grads.base, &grads.learnable])
                .map_err(|e| Error::Divergence(format!("supervised update {}: {e}", state.update)))?;
            loss_sum += loss;
            steps += 1;
        }
    }
    Ok(loss_sum / steps.max(1) as f64)
}

/// Runs supervised iterations until `cfg.supervised_updates`, calling
/// `on_snapshot` every `checkpoint_interval` updates.
pub fn supervised_phase(
    state: &mut SupervisedState,
    teacher: &ActorCritic,
    log: &mut Vec<LogRow>,
    cfg: &ExperimentConfig,
    on_snapshot: &mut dyn FnMut(&SupervisedState, &[LogRow]) -> Result<()>,
) -> Result<()> {
    while state.update < cfg.supervised_updates {
        let row = supervised_iteration(state, teacher, cfg)?;
        log.push(row);
        if cfg.checkpoint_interval > 0 && state.update.is_multiple_of(cfg.checkpoint_interval) {
            on_snapshot(state, log)?;
        }
    }
    Ok(())
}

/// Collects at least `cfg.calibration_samples` uncertainties from student
/// rollouts on fresh ID environments (deterministic actions on `μ̂`), then
/// fits the blend parameters. Returns the parameters and the validation set.
pub fn calibrate(teacher: &ActorCritic, adapter: &EpinetAdapter, cfg: &ExperimentConfig) -> Result<(AlphaParams, Vec<f64>)> {
    let mut venv = VecEnv::new(
        &cfg.env(),
        cfg.num_envs,
        ContextSource::Set(cfg.context_set()),
        cfg.history_len,
        cfg.seed,
        stream::PHASE_CALIBRATION,
    );
    let n = sample_count(adapter, cfg);
    let rows: Vec<usize> = (0..venv.len()).collect();
    let mut us = Vec::with_capacity(cfg.calibration_samples + venv.len());
    while us.len() < cfg.calibration_samples {
        let est = estimate_rows(adapter, &mut venv, &rows, n)?;
        let mut z = Matrix::zeros(venv.len(), cfg.latent_dim);
        for (i, e) in est.iter().enumerate() {
            z.row_mut(i).copy_from_slice(&e.mean);
            us.push(e.uncertainty);
        }
        let obs_n = teacher.normalizer.normalize_batch(&venv.obs)?;
        let means = teacher.action_means(&obs_n, &z)?;
        for i in 0..venv.len() {
            let out = venv.step(i, means.row(i), None)?;
            if out.done {
                venv.reset(i);
            }
        }
    }
    let params = finetune_alpha(&us, cfg.u_min, cfg.u_max, cfg.alpha_at_max)?;
    Ok((params, us))
}
