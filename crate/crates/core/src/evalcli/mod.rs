//! Deployment evaluation over context grids and disturbance sweeps.

mod report;

use std::f64::consts::TAU;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use report::{
    read_grid_csv, read_summary_csv, read_sweep_csv, summarize, write_grid_csv, write_summary_csv, write_sweep_csv,
    GridRow, SummaryRow, SweepRow,
};

use crate::encoders::{AlphaParams, EpinetAdapter};
use crate::envsim::{ContextSet, ContextSetName, NUM_ACTUATORS};
use crate::error::{Error, Result};
use crate::netcore::Matrix;
use crate::pipeline::{estimate_rows, sample_count, Algorithm, Checkpoint, ContextSource, ExperimentConfig, VecEnv};
use crate::ppo::ActorCritic;
use crate::rng::stream;

/// Fraction of steps that receive a random impulse in the disturbance sweep.
pub const DISTURBANCE_PROB: f64 = 0.05;

/// Mass × frozen-actuator grid of deployment contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentGrid {
    pub mass_multiples: Vec<f64>,
    /// `None` leaves every actuator working; written `"none"` in files.
    #[serde(with = "frozen_list")]
    pub frozen_actuators: Vec<Option<usize>>,
    pub episodes: usize,
}

impl Default for DeploymentGrid {
    fn default() -> Self {
        let mut frozen = vec![None];
        frozen.extend((0..NUM_ACTUATORS).map(Some));
        Self {
            mass_multiples: vec![0.5, 1.0, 2.0, 3.0, 4.0],
            frozen_actuators: frozen,
            episodes: 200,
        }
    }
}

mod frozen_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Index(usize),
        Label(String),
    }

    pub fn serialize<S: Serializer>(v: &[Option<usize>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|f| match f {
                Some(k) => Repr::Index(*k),
                None => Repr::Label("none".into()),
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<usize>>, D::Error> {
        Vec::<Repr>::deserialize(d)?
            .into_iter()
            .map(|r| match r {
                Repr::Index(k) => Ok(Some(k)),
                Repr::Label(l) if l == "none" => Ok(None),
                Repr::Label(l) => Err(serde::de::Error::custom(format!("frozen actuator `{l}`"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mass_multiple: f64,
    pub frozen_actuator: Option<usize>,
    pub in_distribution: bool,
}

impl DeploymentGrid {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let g: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if g.frozen_actuators.iter().flatten().any(|&k| k >= NUM_ACTUATORS) {
            return Err(Error::Config(format!("frozen actuator index must be below {NUM_ACTUATORS}")));
        }
        if g.mass_multiples.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Config("mass multiples must be positive".into()));
        }
        Ok(g)
    }

    /// Cells in row-major order (mass outer). A cell is ID iff its fixed
    /// parameters lie inside the training set.
    pub fn cells(&self, train: &ContextSet) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.mass_multiples.len() * self.frozen_actuators.len());
        for &m in &self.mass_multiples {
            for &f in &self.frozen_actuators {
                out.push(Cell {
                    mass_multiple: m,
                    frozen_actuator: f,
                    in_distribution: train.mass.contains(m) && (f.is_none() || train.frozen_actuator_allowed),
                });
            }
        }
        out
    }
}

/// How a trained run picks its latent at deployment.
pub enum Deployment<'a> {
    /// `z_rob` always.
    Robust { policy: &'a ActorCritic },
    /// Point adapter latent, no gating.
    Adaptive {
        policy: &'a ActorCritic,
        adapter: &'a EpinetAdapter,
    },
    /// `α·μ̂ + (1 − α)·z_rob` from the epinet statistics.
    Blended {
        policy: &'a ActorCritic,
        adapter: &'a EpinetAdapter,
        alpha: &'a AlphaParams,
        samples: usize,
    },
    /// Adaptive policy on `μ̂` while `α ≥ threshold`, robust fallback otherwise.
    Switch {
        adaptive: &'a ActorCritic,
        fallback: &'a ActorCritic,
        adapter: &'a EpinetAdapter,
        alpha: &'a AlphaParams,
        samples: usize,
        threshold: f64,
    },
}

impl<'a> Deployment<'a> {
    pub fn from_checkpoint(ck: &'a Checkpoint) -> Result<Self> {
        let cfg = &ck.config;
        let policy = &ck.rl.ac;
        let adapter = || {
            ck.supervised
                .as_ref()
                .map(|s| &s.adapter)
                .ok_or_else(|| Error::Config("checkpoint has no trained adapter".into()))
        };
        Ok(match cfg.algorithm {
            Algorithm::Robust | Algorithm::Dr | Algorithm::DrPrivilegedCritic => Deployment::Robust { policy },
            Algorithm::Contextual | Algorithm::ContextualNoise => Deployment::Adaptive {
                policy,
                adapter: adapter()?,
            },
            Algorithm::Gram | Algorithm::GramSeparate => {
                let alpha = ck.alpha_params()?;
                let adapter = adapter()?;
                Deployment::Blended {
                    policy,
                    adapter,
                    alpha,
                    samples: sample_count(adapter, cfg),
                }
            }
            Algorithm::ModularSwitch => {
                let alpha = ck.alpha_params()?;
                let adapter = adapter()?;
                Deployment::Switch {
                    adaptive: policy,
                    fallback: &ck
                        .fallback
                        .as_ref()
                        .ok_or_else(|| Error::Config("checkpoint has no fallback policy".into()))?
                        .ac,
                    adapter,
                    alpha,
                    samples: sample_count(adapter, cfg),
                    threshold: cfg.switch_threshold,
                }
            }
        })
    }

    pub fn reports_alpha(&self) -> bool {
        matches!(self, Deployment::Blended { .. } | Deployment::Switch { .. })
    }

    /// Deterministic actions for `rows`, with `α` and `u` per row where the
    /// deployment has them.
    fn act(&self, venv: &mut VecEnv, rows: &[usize], latent_dim: usize) -> Result<Decision> {
        let obs = venv.obs.gather_rows(rows);
        let mut z = Matrix::zeros(rows.len(), latent_dim);
        let mut alpha = Vec::new();
        let mut uncertainty = Vec::new();
        let actions = match *self {
            Deployment::Robust { policy } => policy.action_means(&policy.normalizer.normalize_batch(&obs)?, &z)?,
            Deployment::Adaptive { policy, adapter } => {
                for (k, e) in estimate_rows(adapter, venv, rows, 1)?.into_iter().enumerate() {
                    z.row_mut(k).copy_from_slice(&e.mean);
                }
                policy.action_means(&policy.normalizer.normalize_batch(&obs)?, &z)?
            }
            Deployment::Blended {
                policy,
                adapter,
                alpha: p,
                samples,
            } => {
                for (k, e) in estimate_rows(adapter, venv, rows, samples)?.into_iter().enumerate() {
                    let a = p.alpha(e.uncertainty);
                    for (dst, m) in z.row_mut(k).iter_mut().zip(&e.mean) {
                        *dst = a * m;
                    }
                    alpha.push(a);
                    uncertainty.push(e.uncertainty);
                }
                policy.action_means(&policy.normalizer.normalize_batch(&obs)?, &z)?
            }
            Deployment::Switch {
                adaptive,
                fallback,
                adapter,
                alpha: p,
                samples,
                threshold,
            } => {
                let est = estimate_rows(adapter, venv, rows, samples)?;
                for (k, e) in est.iter().enumerate() {
                    z.row_mut(k).copy_from_slice(&e.mean);
                    alpha.push(p.alpha(e.uncertainty));
                    uncertainty.push(e.uncertainty);
                }
                let main = adaptive.action_means(&adaptive.normalizer.normalize_batch(&obs)?, &z)?;
                let robust = fallback.action_means(
                    &fallback.normalizer.normalize_batch(&obs)?,
                    &Matrix::zeros(rows.len(), latent_dim),
                )?;
                let mut out = main;
                for (k, &a) in alpha.iter().enumerate() {
                    if a < threshold {
                        out.row_mut(k).copy_from_slice(robust.row(k));
                    }
                }
                out
            }
        };
        Ok(Decision {
            actions,
            alpha,
            uncertainty,
        })
    }
}

struct Decision {
    actions: Matrix,
    alpha: Vec<f64>,
    uncertainty: Vec<f64>,
}

/// Per-episode outcomes of one batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeBatch {
    /// `max(return, 0) / horizon` per episode.
    pub returns: Vec<f64>,
    /// Per-episode mean `α`; empty when the deployment has none.
    pub alphas: Vec<f64>,
    /// Every per-step uncertainty seen; empty without an epinet.
    pub uncertainties: Vec<f64>,
}

/// Runs `episodes` deterministic-action episodes in parallel from
/// `source`. A positive `disturbance` adds impulses at random steps with
/// uniform direction and magnitude uniform on `[0, disturbance]`.
pub fn run_episodes(
    dep: &Deployment<'_>,
    cfg: &ExperimentConfig,
    source: ContextSource,
    episodes: usize,
    seed: u64,
    offset: u64,
    disturbance: f64,
) -> Result<EpisodeBatch> {
    let mut out = EpisodeBatch::default();
    if episodes == 0 {
        return Ok(out);
    }
    let mut venv = VecEnv::new(&cfg.env(), episodes, source, cfg.history_len, seed, offset);
    let mut active: Vec<usize> = (0..episodes).collect();
    let mut alpha_sum = vec![0.0; episodes];
    let mut steps = vec![0usize; episodes];
    while !active.is_empty() {
        let dec = dep.act(&mut venv, &active, cfg.latent_dim)?;
        out.uncertainties.extend_from_slice(&dec.uncertainty);
        let mut still = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            if let Some(a) = dec.alpha.get(k) {
                alpha_sum[i] += a;
            }
            let impulse = if disturbance > 0.0 {
                let rng = venv.adversary_rng(i);
                if rng.random::<f64>() < DISTURBANCE_PROB {
                    let angle = rng.random_range(0.0..TAU);
                    let m = rng.random_range(0.0..=disturbance);
                    Some([m * angle.cos(), m * angle.sin()])
                } else {
                    None
                }
            } else {
                None
            };
            let r = venv.step(i, dec.actions.row(k), impulse)?;
            steps[i] += 1;
            if !r.done {
                still.push(i);
            }
        }
        active = still;
    }
    let horizon = cfg.horizon as f64;
    out.returns = venv.episode_return.iter().map(|r| r.max(0.0) / horizon).collect();
    if dep.reports_alpha() {
        out.alphas = alpha_sum.iter().zip(&steps).map(|(s, &n)| s / n.max(1) as f64).collect();
    }
    Ok(out)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn alpha_columns(b: &EpisodeBatch) -> (Option<f64>, Option<f64>) {
    if b.alphas.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&b.alphas);
        (Some(m), Some(s))
    }
}

/// Stream offset of grid cell `k`; far above every training stream.
fn cell_offset(k: usize) -> u64 {
    stream::PHASE_EVAL + ((k as u64 + 1) << 36)
}

/// Shared offset of every sweep point, so rates see common random numbers.
const SWEEP_OFFSET: u64 = stream::PHASE_EVAL + (1 << 35);

/// Offset of the held-out histories used for uncertainty comparisons.
const UNCERTAINTY_OFFSET: u64 = stream::PHASE_EVAL + (3 << 34);

/// Evaluates a finished run on every grid cell with evaluation seed `seed`.
pub fn evaluate(ck: &Checkpoint, grid: &DeploymentGrid, seed: u64) -> Result<Vec<GridRow>> {
    let dep = Deployment::from_checkpoint(ck)?;
    let cfg = &ck.config;
    let train = cfg.context_set();
    let base = ContextSet::named(ContextSetName::BaseId);
    grid.cells(&train)
        .into_iter()
        .enumerate()
        .map(|(k, cell)| {
            let source = ContextSource::Cell {
                base: base.clone(),
                mass_multiple: Some(cell.mass_multiple),
                frozen_actuator: cell.frozen_actuator,
            };
            let b = run_episodes(&dep, cfg, source, grid.episodes, seed, cell_offset(k), 0.0)?;
            let (mean_return, std_return) = mean_std(&b.returns);
            let (mean_alpha, std_alpha) = alpha_columns(&b);
            Ok(GridRow {
                algorithm: cfg.algorithm.name().to_string(),
                seed,
                mass_multiple: cell.mass_multiple,
                frozen_actuator: cell.frozen_actuator,
                in_distribution: cell.in_distribution,
                mean_return,
                std_return,
                mean_alpha,
                std_alpha,
                n: b.returns.len(),
            })
        })
        .collect()
}

/// Return against disturbance scale on training-set contexts.
pub fn ood_sweep(ck: &Checkpoint, rates: &[f64], episodes: usize, seed: u64) -> Result<Vec<SweepRow>> {
    if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::Config(format!("disturbance rate must be finite and non-negative, got {r}")));
    }
    let dep = Deployment::from_checkpoint(ck)?;
    let cfg = &ck.config;
    rates
        .iter()
        .map(|&rate| {
            let source = ContextSource::Set(cfg.context_set());
            let b = run_episodes(&dep, cfg, source, episodes, seed, SWEEP_OFFSET, rate)?;
            let (mean_return, std_return) = mean_std(&b.returns);
            let (mean_alpha, std_alpha) = alpha_columns(&b);
            Ok(SweepRow {
                algorithm: cfg.algorithm.name().to_string(),
                seed,
                rate,
                mean_return,
                std_return,
                mean_alpha,
                std_alpha,
                n: b.returns.len(),
            })
        })
        .collect()
}

/// Per-step uncertainties along deployed episodes from `source`, on
/// streams disjoint from training, calibration and grid evaluation.
pub fn collect_uncertainty(ck: &Checkpoint, source: ContextSource, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let dep = Deployment::from_checkpoint(ck)?;
    if !dep.reports_alpha() {
        return Err(Error::InvalidArgument(format!(
            "{} has no epinet uncertainty",
            ck.config.algorithm
        )));
    }
    Ok(run_episodes(&dep, &ck.config, source, episodes, seed, UNCERTAINTY_OFFSET, 0.0)?.uncertainties)
}
