use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{adaptive_lr, check_excluded, normalize_advantages, surrogate_term, PpoConfig, RolloutBuffer};
use crate::encoders::ContextEncoder;
use crate::error::{check_len, Error, Result};
use crate::netcore::{clip_global_norm, entropy, log_prob, log_prob_grads, Adam, GaussianPolicy, Init, Matrix, Mlp, RunningNormalizer, Tape};
use crate::rng::{self, stream};

/// Layer widths and initial exploration noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub latent_dim: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub log_std_init: f64,
}

/// Policy, critic and privileged context encoder trained jointly, plus the
/// observation normalizer shared by policy and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub policy: GaussianPolicy,
    pub critic: Mlp,
    pub encoder: ContextEncoder,
    pub normalizer: RunningNormalizer,
}

fn with_io(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl ActorCritic {
    /// Small final policy layer, unit-gain critic output.
    pub const POLICY_OUTPUT_GAIN: f64 = 0.01;

    pub fn new(shape: &NetShape, seed: u64) -> Result<Self> {
        Self::with_stream_offset(shape, seed, 0)
    }

    /// Initializes from the streams shifted by `offset`, for an auxiliary
    /// network family under the same seed.
    pub fn with_stream_offset(shape: &NetShape, seed: u64, offset: u64) -> Result<Self> {
        let input = shape.obs_dim + shape.latent_dim;
        let mean = Mlp::new(
            &with_io(input, &shape.policy_hidden, shape.act_dim),
            Init::with_output_gain(Self::POLICY_OUTPUT_GAIN),
            &mut rng::stream(seed, offset + stream::POLICY_INIT),
        )?;
        let critic = Mlp::new(
            &with_io(input, &shape.critic_hidden, 1),
            Init::with_output_gain(1.0),
            &mut rng::stream(seed, offset + stream::CRITIC_INIT),
        )?;
        let encoder = ContextEncoder::new(
            &shape.encoder_hidden,
            shape.latent_dim,
            &mut rng::stream(seed, offset + stream::ENCODER_INIT),
        )?;
        Ok(Self {
            policy: GaussianPolicy::new(mean, shape.log_std_init),
            critic,
            encoder,
            normalizer: RunningNormalizer::new(shape.obs_dim),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.policy.action_dim()
    }

    pub fn group_sizes(&self) -> [usize; 4] {
        [
            self.policy.mean.num_params(),
            self.policy.log_std.len(),
            self.critic.num_params(),
            self.encoder.net.num_params(),
        ]
    }

    pub fn new_optimizer(&self, lr: f64) -> Adam {
        Adam::new(lr, &self.group_sizes())
    }

    /// Latent rows: `f(c) + noise` where `uses_encoder` is set, zero elsewhere.
    pub fn latents(&self, context: &Matrix, noise: &Matrix, uses_encoder: &[bool]) -> Result<Matrix> {
        check_len(context.rows(), uses_encoder.len())?;
        let mut z = Matrix::zeros(context.rows(), self.latent_dim());
        if uses_encoder.iter().any(|&u| u) {
            let enc = self.encoder.encode_batch(context)?;
            mask_latents(&enc, noise, uses_encoder, &mut z);
        }
        Ok(z)
    }

    pub fn action_means(&self, obs: &Matrix, latents: &Matrix) -> Result<Matrix> {
        self.policy.mean.forward_batch(&obs.hcat(latents))
    }

    pub fn values(&self, obs: &Matrix, latents: &Matrix) -> Result<Vec<f64>> {
        Ok(self.critic.forward_batch(&obs.hcat(latents))?.into_vec())
    }
}

fn mask_latents(enc: &Matrix, noise: &Matrix, uses_encoder: &[bool], out: &mut Matrix) {
    for (r, &u) in uses_encoder.iter().enumerate() {
        if u {
            let dst = out.row_mut(r);
            for ((d, e), n) in dst.iter_mut().zip(enc.row(r)).zip(noise.row(r)) {
                *d = e + n;
            }
        }
    }
}

/// Aggregates over every minibatch step of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean of the per-epoch KL estimates.
    pub kl: f64,
    /// Learning rate after the final adaptation.
    pub lr: f64,
    pub grad_norm: f64,
    pub excluded: usize,
}

struct Grads {
    mean: Vec<f64>,
    log_std: Vec<f64>,
    critic: Vec<f64>,
    encoder: Vec<f64>,
}

/// Runs `epochs × minibatches` optimizer steps on the clipped surrogate,
/// value loss and entropy bonus. The learning rate adapts once per epoch
/// from the mean KL of that epoch's minibatches.
pub fn ppo_update<R: Rng + ?Sized>(
    ac: &mut ActorCritic,
    opt: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if !buf.is_full() {
        return Err(Error::InvalidArgument("rollout buffer is not full".into()));
    }
    let (adv_all, targets_all) = buf.advantages(cfg.gamma, cfg.gae_lambda)?;
    let n = buf.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut steps = 0usize;
    let mut kl_sum = 0.0;

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_kl = 0.0;
        for mb in 0..cfg.minibatches {
            let idx = &order[mb * n / cfg.minibatches..(mb + 1) * n / cfg.minibatches];
            let s = minibatch_step(ac, opt, buf, cfg, idx, &adv_all, &targets_all)?;
            epoch_kl += s.kl;
            stats.policy_loss += s.policy_loss;
            stats.value_loss += s.value_loss;
            stats.entropy += s.entropy;
            stats.grad_norm += s.grad_norm;
            stats.excluded += s.excluded;
            steps += 1;
        }
        epoch_kl /= cfg.minibatches as f64;
        kl_sum += epoch_kl;
        opt.lr = adaptive_lr(opt.lr, epoch_kl, cfg.target_kl);
    }
    let k = steps.max(1) as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.grad_norm /= k;
    stats.kl = kl_sum / cfg.epochs as f64;
    stats.lr = opt.lr;
    Ok(stats)
}

fn minibatch_step(
    ac: &mut ActorCritic,
    opt: &mut Adam,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    idx: &[usize],
    adv_all: &[f64],
    targets_all: &[f64],
) -> Result<UpdateStats> {
    let b = idx.len();
    let obs = buf.obs.gather_rows(idx);
    let ctx = buf.context.gather_rows(idx);
    let noise = buf.latent_noise.gather_rows(idx);
    let actions = buf.actions.gather_rows(idx);
    let use_p: Vec<bool> = idx.iter().map(|&i| buf.policy_uses_encoder[i]).collect();
    let use_c: Vec<bool> = idx.iter().map(|&i| buf.critic_uses_encoder[i]).collect();
    let mut adv: Vec<f64> = idx.iter().map(|&i| adv_all[i]).collect();
    normalize_advantages(&mut adv);

    let od = ac.obs_dim();
    let d = ac.latent_dim();
    let any_enc = use_p.iter().chain(&use_c).any(|&u| u);

    let mut enc_tape = Tape::new();
    let enc = if any_enc {
        ac.encoder.net.forward_traced(&ctx, &mut enc_tape)?.clone()
    } else {
        Matrix::zeros(b, d)
    };
    let mut zp = Matrix::zeros(b, d);
    let mut zc = Matrix::zeros(b, d);
    mask_latents(&enc, &noise, &use_p, &mut zp);
    mask_latents(&enc, &noise, &use_c, &mut zc);

    let mut pol_tape = Tape::new();
    let means = ac.policy.mean.forward_traced(&obs.hcat(&zp), &mut pol_tape)?.clone();
    let mut crit_tape = Tape::new();
    let values = ac.critic.forward_traced(&obs.hcat(&zc), &mut crit_tape)?.clone();

    let act_dim = ac.act_dim();
    let mut g = Grads {
        mean: vec![0.0; ac.policy.mean.num_params()],
        log_std: vec![0.0; act_dim],
        critic: vec![0.0; ac.critic.num_params()],
        encoder: vec![0.0; ac.encoder.net.num_params()],
    };

    // surrogate
    let mut d_mean = Matrix::zeros(b, act_dim);
    let mut dm = vec![0.0; act_dim];
    let mut dls = vec![0.0; act_dim];
    let mut kept = 0usize;
    let mut pol_loss = 0.0;
    let mut kl = 0.0;
    let mut coeffs = vec![0.0; b];
    let mut ratios = vec![f64::NAN; b];
    for r in 0..b {
        let lp = log_prob(means.row(r), &ac.policy.log_std, actions.row(r));
        let old = buf.log_probs[idx[r]];
        let ratio = (lp - old).exp();
        if !ratio.is_finite() {
            continue;
        }
        kept += 1;
        ratios[r] = ratio;
        kl += old - lp;
        pol_loss += surrogate_term(ratio, adv[r], cfg.clip);
        let unclipped = ratio * adv[r];
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv[r];
        // d/d logp of -min(ρA, clip(ρ)A); zero when the clipped branch binds
        coeffs[r] = if unclipped <= clipped { -unclipped } else { 0.0 };
    }
    let excluded = b - kept;
    check_excluded(excluded, b)?;
    let inv = 1.0 / kept.max(1) as f64;
    for r in 0..b {
        if !ratios[r].is_finite() || coeffs[r] == 0.0 {
            continue;
        }
        log_prob_grads(means.row(r), &ac.policy.log_std, actions.row(r), &mut dm, &mut dls);
        let c = coeffs[r] * inv;
        for (o, v) in d_mean.row_mut(r).iter_mut().zip(&dm) {
            *o = c * v;
        }
        for (o, v) in g.log_std.iter_mut().zip(&dls) {
            *o += c * v;
        }
    }
    pol_loss *= inv;
    kl *= inv;

    let ent = entropy(&ac.policy.log_std);
    g.log_std.iter_mut().for_each(|x| *x -= cfg.entropy_coef);

    // value
    let mut d_val = Matrix::zeros(b, 1);
    let mut v_loss = 0.0;
    for r in 0..b {
        let diff = values.get(r, 0) - targets_all[idx[r]];
        v_loss += diff * diff;
        d_val.set(r, 0, cfg.value_coef * 2.0 * diff / b as f64);
    }
    v_loss /= b as f64;

    let total = pol_loss + cfg.value_coef * v_loss - cfg.entropy_coef * ent;
    if !total.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {total}")));
    }

    let d_in_p = ac.policy.mean.backward(&pol_tape, &d_mean, &mut g.mean)?;
    let d_in_c = ac.critic.backward(&crit_tape, &d_val, &mut g.critic)?;
    if any_enc {
        let mut d_z = Matrix::zeros(b, d);
        for r in 0..b {
            let dz = d_z.row_mut(r);
            if use_p[r] {
                for (o, v) in dz.iter_mut().zip(&d_in_p.row(r)[od..]) {
                    *o += v;
                }
            }
            if use_c[r] {
                for (o, v) in dz.iter_mut().zip(&d_in_c.row(r)[od..]) {
                    *o += v;
                }
            }
        }
        ac.encoder.net.backward(&enc_tape, &d_z, &mut g.encoder)?;
    }

    let grad_norm = clip_global_norm(
        &mut [&mut g.mean, &mut g.log_std, &mut g.critic, &mut g.encoder],
        cfg.max_grad_norm,
    );
    opt.step(
        &mut [
            ac.policy.mean.params_mut(),
            &mut ac.policy.log_std,
            ac.critic.params_mut(),
            ac.encoder.net.params_mut(),
        ],
        &[&g.mean, &g.log_std, &g.critic, &g.encoder],
    )
    .map_err(|e| match e {
        Error::NonFiniteGradient => Error::Divergence("non-finite gradient".into()),
        other => other,
    })?;

    Ok(UpdateStats {
        policy_loss: pol_loss,
        value_loss: v_loss,
        entropy: ent,
        kl,
        lr: opt.lr,
        grad_norm,
        excluded,
    })
}
