//! Learned disturbance adversary for OOD-mode environments.
//!
//! The adversary picks an impulse direction from the protagonist's
//! observation. Interventions happen on a random fraction of steps with a
//! magnitude cap that ramps linearly over training. Each intervention is
//! rewarded with the negated protagonist reward that follows it.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::netcore::{clip_global_norm, log_prob_grads, Adam, GaussianPolicy, Init, Matrix, Mlp, Tape};
use crate::ppo::{adaptive_lr, normalize_advantages, surrogate_term};

/// Which protagonist rewards an intervention is credited with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditMode {
    /// Mean negated reward from the intervention step until the next
    /// intervention in the same environment or the episode end.
    Intervention,
    /// Sum of negated rewards from the intervention step to the episode end.
    Episode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversaryConfig {
    pub intervention_prob: f64,
    pub max_magnitude: f64,
    pub update_ratio: usize,
    pub credit: CreditMode,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub lr: f64,
    pub epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub target_kl: f64,
    pub max_grad_norm: f64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            intervention_prob: 0.05,
            max_magnitude: 1.0,
            update_ratio: 10,
            credit: CreditMode::Intervention,
            hidden: vec![64, 64],
            log_std_init: 0.0,
            lr: 1e-3,
            epochs: 5,
            clip: 0.2,
            entropy_coef: 0.01,
            target_kl: 0.01,
            max_grad_norm: 1.0,
        }
    }
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.intervention_prob)
            && self.max_magnitude >= 0.0
            && self.update_ratio > 0
            && self.lr > 0.0
            && self.epochs > 0
            && self.clip > 0.0
            && self.entropy_coef >= 0.0
            && self.target_kl > 0.0
            && self.max_grad_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid adversary settings: {self:?}")))
        }
    }
}

/// Linear magnitude ramp `M_k = M_final · k / K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarySchedule {
    pub intervention_prob: f64,
    pub max_magnitude: f64,
    pub total_updates: usize,
}

impl AdversarySchedule {
    pub fn magnitude_cap(&self, update: usize) -> f64 {
        if self.total_updates == 0 {
            return self.max_magnitude;
        }
        self.max_magnitude * update.min(self.total_updates) as f64 / self.total_updates as f64
    }
}

/// A sampled disturbance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intervention {
    pub impulse: [f64; 2],
    pub angle: f64,
    pub magnitude: f64,
    pub log_prob: f64,
}

/// Gaussian policy over the impulse angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryPolicy {
    pub policy: GaussianPolicy,
}

impl AdversaryPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], log_std_init: f64, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mean = Mlp::new(&sizes, Init::with_output_gain(0.01), rng)?;
        Ok(Self {
            policy: GaussianPolicy::new(mean, log_std_init),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.mean.input_dim()
    }

    pub fn mean_angle(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.policy.mean.forward(obs)?[0])
    }
}

/// With probability `p` draws an angle from the adversary and a magnitude
/// uniform on `[0, M_k]`. The uniform draw for the coin always happens so the
/// stream advances identically whether or not the step intervenes.
pub fn maybe_intervene<R: Rng + ?Sized>(
    obs: &[f64],
    schedule: &AdversarySchedule,
    adv: &AdversaryPolicy,
    update: usize,
    rng: &mut R,
) -> Result<Option<Intervention>> {
    let coin: f64 = rng.random();
    if coin >= schedule.intervention_prob {
        return Ok(None);
    }
    let mean = adv.policy.mean.forward(obs)?;
    let angle = adv.policy.sample(&mean, rng)[0];
    let log_prob = adv.policy.log_prob(&mean, &[angle]);
    let cap = schedule.magnitude_cap(update);
    let magnitude = if cap > 0.0 { rng.random_range(0.0..=cap) } else { 0.0 };
    Ok(Some(Intervention {
        impulse: [magnitude * angle.cos(), magnitude * angle.sin()],
        angle,
        magnitude,
        log_prob,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    obs: Vec<f64>,
    angle: f64,
    log_prob: f64,
    credit: f64,
    steps: usize,
}

/// Interventions awaiting credit, and closed ones awaiting an update.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InterventionBuffer {
    open: Vec<Vec<Pending>>,
    closed_obs: Vec<Vec<f64>>,
    closed_angle: Vec<f64>,
    closed_log_prob: Vec<f64>,
    closed_reward: Vec<f64>,
    credit: Option<CreditMode>,
}

impl InterventionBuffer {
    pub fn new(num_envs: usize, credit: CreditMode) -> Self {
        Self {
            open: vec![Vec::new(); num_envs],
            credit: Some(credit),
            ..Self::default()
        }
    }

    fn mode(&self) -> CreditMode {
        self.credit.unwrap_or(CreditMode::Intervention)
    }

    /// Number of closed interventions ready for training.
    pub fn ready(&self) -> usize {
        self.closed_reward.len()
    }

    pub fn open_count(&self) -> usize {
        self.open.iter().map(Vec::len).sum()
    }

    /// Registers an intervention applied at the current step of `env`.
    /// Call before [`credit`](Self::credit) for that step.
    pub fn open(&mut self, env: usize, obs: &[f64], iv: &Intervention) {
        if self.mode() == CreditMode::Intervention {
            self.close(env);
        }
        self.open[env].push(Pending {
            obs: obs.to_vec(),
            angle: iv.angle,
            log_prob: iv.log_prob,
            credit: 0.0,
            steps: 0,
        });
    }

    /// Credits the protagonist reward of one step to the open interventions.
    pub fn credit(&mut self, env: usize, protagonist_reward: f64) {
        for p in &mut self.open[env] {
            p.credit -= protagonist_reward;
            p.steps += 1;
        }
    }

    /// Closes every open intervention of `env`, e.g. at episode end.
    pub fn close(&mut self, env: usize) {
        let mode = self.mode();
        for p in self.open[env].drain(..) {
            if p.steps == 0 {
                continue;
            }
            let reward = match mode {
                CreditMode::Intervention => p.credit / p.steps as f64,
                CreditMode::Episode => p.credit,
            };
            self.closed_obs.push(p.obs);
            self.closed_angle.push(p.angle);
            self.closed_log_prob.push(p.log_prob);
            self.closed_reward.push(reward);
        }
    }

    pub fn rewards(&self) -> &[f64] {
        &self.closed_reward
    }

    fn take_closed(&mut self) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            std::mem::take(&mut self.closed_obs),
            std::mem::take(&mut self.closed_angle),
            std::mem::take(&mut self.closed_log_prob),
            std::mem::take(&mut self.closed_reward),
        )
    }
}

/// Counts protagonist updates and fires an adversary update every
/// `ratio` of them. A skipped update (no data) keeps the counter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateCadence {
    pub since_update: usize,
}

impl UpdateCadence {
    /// Call after each protagonist update; true when the adversary is due.
    pub fn tick(&mut self, ratio: usize) -> bool {
        self.since_update += 1;
        self.since_update >= ratio
    }

    pub fn reset(&mut self) {
        self.since_update = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdversaryStats {
    pub samples: usize,
    pub mean_reward: f64,
    pub kl: f64,
    pub lr: f64,
}

/// PPO on the closed interventions. No critic: the advantage is the
/// batch-normalized adversary reward. Returns `None` and leaves the buffer
/// untouched when nothing is ready.
pub fn adversary_update<R: Rng + ?Sized>(
    adv: &mut AdversaryPolicy,
    opt: &mut Adam,
    buf: &mut InterventionBuffer,
    cfg: &AdversaryConfig,
    rng: &mut R,
) -> Result<Option<AdversaryStats>> {
    if buf.ready() == 0 {
        return Ok(None);
    }
    let (obs_rows, angles, old_lp, rewards) = buf.take_closed();
    let n = rewards.len();
    let obs = Matrix::from_rows(&obs_rows);
    check_len(adv.obs_dim(), obs.cols())?;
    let mut adv_norm = rewards.clone();
    normalize_advantages(&mut adv_norm);
    let mean_reward = rewards.iter().sum::<f64>() / n as f64;

    let mut order: Vec<usize> = (0..n).collect();
    let mut kl_total = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let x = obs.gather_rows(&order);
        let mut tape = Tape::new();
        let means = adv.policy.mean.forward_traced(&x, &mut tape)?.clone();
        let mut d_mean = Matrix::zeros(n, 1);
        let mut g_ls = vec![0.0; 1];
        let mut g_mean = vec![0.0; adv.policy.mean.num_params()];
        let (mut dm, mut dls) = ([0.0], [0.0]);
        let mut kl = 0.0;
        let mut loss = 0.0;
        for (r, &i) in order.iter().enumerate() {
            let m = [means.get(r, 0)];
            let lp = crate::netcore::log_prob(&m, &adv.policy.log_std, &[angles[i]]);
            let ratio = (lp - old_lp[i]).exp();
            if !ratio.is_finite() {
                return Err(Error::Divergence("non-finite adversary ratio".into()));
            }
            kl += old_lp[i] - lp;
            loss += surrogate_term(ratio, adv_norm[i], cfg.clip);
            let unclipped = ratio * adv_norm[i];
            let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv_norm[i];
            let c = if unclipped <= clipped { -unclipped / n as f64 } else { 0.0 };
            if c != 0.0 {
                log_prob_grads(&m, &adv.policy.log_std, &[angles[i]], &mut dm, &mut dls);
                d_mean.set(r, 0, c * dm[0]);
                g_ls[0] += c * dls[0];
            }
        }
        g_ls[0] -= cfg.entropy_coef;
        if !loss.is_finite() {
            return Err(Error::Divergence("non-finite adversary loss".into()));
        }
        adv.policy.mean.backward(&tape, &d_mean, &mut g_mean)?;
        clip_global_norm(&mut [&mut g_mean, &mut g_ls], cfg.max_grad_norm);
        opt.step(&mut [adv.policy.mean.params_mut(), &mut adv.policy.log_std], &[&g_mean, &g_ls])
            .map_err(|_| Error::Divergence("non-finite adversary gradient".into()))?;
        let kl = kl / n as f64;
        kl_total += kl;
        opt.lr = adaptive_lr(opt.lr, kl, cfg.target_kl);
    }
    Ok(Some(AdversaryStats {
        samples: n,
        mean_reward,
        kl: kl_total / cfg.epochs as f64,
        lr: opt.lr,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn policy(seed: u64) -> AdversaryPolicy {
        AdversaryPolicy::new(3, &[8, 8], 0.0, &mut rng::stream(seed, rng::stream::ADVERSARY_INIT)).unwrap()
    }

    fn schedule(p: f64) -> AdversarySchedule {
        AdversarySchedule {
            intervention_prob: p,
            max_magnitude: 1.0,
            total_updates: 100,
        }
    }

    #[test]
    fn ramp_bounds() {
        let s = schedule(0.05);
        assert_eq!(s.magnitude_cap(0), 0.0);
        assert_eq!(s.magnitude_cap(50), 0.5);
        assert_eq!(s.magnitude_cap(100), 1.0);
        assert_eq!(s.magnitude_cap(1000), 1.0);
        let caps: Vec<f64> = (0..=120).map(|k| s.magnitude_cap(k)).collect();
        assert!(caps.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ramp_start_has_zero_magnitude() {
        let a = policy(0);
        let mut r = rng::stream(0, 1);
        for _ in 0..200 {
            if let Some(iv) = maybe_intervene(&[0.1, 0.2, 0.3], &schedule(1.0), &a, 0, &mut r).unwrap() {
                assert_eq!(iv.magnitude, 0.0);
                assert_eq!(iv.impulse, [0.0, 0.0]);
            }
        }
    }

    #[test]
    fn full_ramp_magnitudes_are_uniform() {
        let a = policy(1);
        let mut r = rng::stream(1, 1);
        let mags: Vec<f64> = (0..20_000)
            .filter_map(|_| maybe_intervene(&[0.0; 3], &schedule(1.0), &a, 100, &mut r).unwrap())
            .map(|iv| {
                let norm = (iv.impulse[0].powi(2) + iv.impulse[1].powi(2)).sqrt();
                assert!((norm - iv.magnitude).abs() < 1e-12);
                iv.magnitude
            })
            .collect();
        assert_eq!(mags.len(), 20_000);
        assert!(mags.iter().all(|m| (0.0..=1.0).contains(m)));
        let mean = mags.iter().sum::<f64>() / mags.len() as f64;
        let se = (1.0f64 / 12.0).sqrt() / (mags.len() as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn intervention_count_is_binomial() {
        let a = policy(2);
        let mut r = rng::stream(2, 2);
        let n = 100_000;
        let count = (0..n)
            .filter(|_| maybe_intervene(&[0.0; 3], &schedule(0.05), &a, 10, &mut r).unwrap().is_some())
            .count() as f64;
        let sd = (n as f64 * 0.05 * 0.95).sqrt();
        assert!((count - 5000.0).abs() < 3.0 * sd, "count {count}");
    }

    #[test]
    fn cadence_fires_every_tenth_update() {
        let mut c = UpdateCadence::default();
        let mut fired = Vec::new();
        for k in 1..=100 {
            if c.tick(10) {
                fired.push(k);
                c.reset();
            }
        }
        assert_eq!(fired, (1..=10).map(|i| i * 10).collect::<Vec<_>>());
    }

    #[test]
    fn skipped_update_keeps_counter() {
        let mut c = UpdateCadence::default();
        for _ in 0..9 {
            assert!(!c.tick(10));
        }
        assert!(c.tick(10));
        // empty buffer: no reset, so the next tick is due again
        let mut a = policy(3);
        let cfg = AdversaryConfig::default();
        let mut opt = Adam::new(cfg.lr, &[a.policy.mean.num_params(), 1]);
        let mut buf = InterventionBuffer::new(2, CreditMode::Intervention);
        assert!(adversary_update(&mut a, &mut opt, &mut buf, &cfg, &mut rng::stream(3, 3)).unwrap().is_none());
        assert!(c.tick(10));
    }

    fn iv(angle: f64) -> Intervention {
        Intervention {
            impulse: [0.0; 2],
            angle,
            magnitude: 0.0,
            log_prob: -1.0,
        }
    }

    #[test]
    fn intervention_credit_is_mean_negated_reward_until_next() {
        let mut b = InterventionBuffer::new(1, CreditMode::Intervention);
        b.open(0, &[0.0; 3], &iv(0.1));
        b.credit(0, 1.0);
        b.credit(0, 0.5);
        b.open(0, &[0.0; 3], &iv(0.2));
        b.credit(0, 0.2);
        b.close(0);
        assert_eq!(b.rewards(), &[-0.75, -0.2]);
    }

    #[test]
    fn episode_credit_sums_to_episode_end() {
        let mut b = InterventionBuffer::new(1, CreditMode::Episode);
        b.open(0, &[0.0; 3], &iv(0.1));
        b.credit(0, 1.0);
        b.open(0, &[0.0; 3], &iv(0.2));
        b.credit(0, 0.5);
        b.close(0);
        assert_eq!(b.rewards(), &[-1.5, -0.5]);
    }

    #[test]
    fn zero_rewards_leave_adversary_unchanged() {
        let mut a = policy(4);
        let before = a.clone();
        let cfg = AdversaryConfig {
            entropy_coef: 0.0,
            ..AdversaryConfig::default()
        };
        let mut opt = Adam::new(cfg.lr, &[a.policy.mean.num_params(), 1]);
        let mut buf = InterventionBuffer::new(2, CreditMode::Intervention);
        let mut r = rng::stream(4, 4);
        for e in 0..2 {
            for k in 0..5 {
                let obs = [k as f64 * 0.1, e as f64, 0.5];
                let mean = a.policy.mean.forward(&obs).unwrap();
                let angle = a.policy.sample(&mean, &mut r)[0];
                let i = Intervention {
                    log_prob: a.policy.log_prob(&mean, &[angle]),
                    ..iv(angle)
                };
                b_open_credit(&mut buf, e, &obs, &i, 0.0);
            }
            buf.close(e);
        }
        let s = adversary_update(&mut a, &mut opt, &mut buf, &cfg, &mut r).unwrap().unwrap();
        assert_eq!(s.samples, 10);
        assert_eq!(a, before);
        assert_eq!(buf.ready(), 0);
    }

    fn b_open_credit(buf: &mut InterventionBuffer, env: usize, obs: &[f64], i: &Intervention, reward: f64) {
        buf.open(env, obs, i);
        buf.credit(env, reward);
    }

    #[test]
    fn adversary_learns_to_prefer_rewarded_direction() {
        // negated protagonist reward is highest when the angle is near π/2
        let mut a = policy(5);
        let cfg = AdversaryConfig::default();
        let mut opt = Adam::new(1e-2, &[a.policy.mean.num_params(), 1]);
        let mut r = rng::stream(5, 5);
        let obs = [0.0, 0.0, 0.0];
        for _ in 0..150 {
            let mut buf = InterventionBuffer::new(1, CreditMode::Intervention);
            for _ in 0..64 {
                let mean = a.policy.mean.forward(&obs).unwrap();
                let angle = a.policy.sample(&mean, &mut r)[0];
                let i = Intervention {
                    log_prob: a.policy.log_prob(&mean, &[angle]),
                    ..iv(angle)
                };
                b_open_credit(&mut buf, 0, &obs, &i, -angle.sin());
                buf.close(0);
            }
            adversary_update(&mut a, &mut opt, &mut buf, &cfg, &mut r).unwrap();
        }
        let m = a.mean_angle(&obs).unwrap();
        assert!(m.sin() > 0.8, "mean angle {m}");
    }
}
