//! Training orchestration: RL phase, supervised adaptation, calibration and
//! checkpointing, for GRAM and every baseline.

mod checkpoint;
mod config;
mod modes;
mod rollout;
mod supervised;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

pub use checkpoint::{Checkpoint, CheckpointView, Stage, CHECKPOINT_VERSION};
pub use config::{Algorithm, ExperimentConfig, ModeSchedule, ModesSetting, Switch};
pub use modes::assign_modes;
pub use rollout::{collect_rollouts, AdversaryHandle, ContextSource, RolloutStats, StepOutcome, VecEnv};
pub use supervised::{
    calibrate, estimate_rows, new_adapter, sample_count, supervised_iteration, supervised_phase, Estimate,
    SupervisedState,
};
pub use train::{rl_iteration, rl_phase, LogRow, RlState};

use crate::encoders::finetune_alpha;
use crate::error::{Error, Result};
use crate::rng::stream;

pub const FINAL_CHECKPOINT: &str = "checkpoint.json";
pub const LATEST_CHECKPOINT: &str = "checkpoint_latest.json";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Configuration of the modular-switch baseline's robust fallback run.
pub fn fallback_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        algorithm: Algorithm::Robust,
        modes: ModesSetting::Auto,
        adversary: Switch::Auto,
        ..cfg.clone()
    }
}

struct Writer {
    dir: PathBuf,
    keep: bool,
}

impl Writer {
    fn snapshot(&self, view: CheckpointView<'_>, update: usize) -> Result<()> {
        view.save(&self.dir.join(LATEST_CHECKPOINT))?;
        if self.keep {
            let name = format!("checkpoint_{}_{update:05}.json", stage_name(view.stage));
            view.save(&self.dir.join(name))?;
        }
        Ok(())
    }
}

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Rl => "rl",
        Stage::Fallback => "fallback",
        Stage::Supervised => "supervised",
        Stage::Calibration => "calibration",
        Stage::Done => "done",
    }
}

/// Trains `cfg` from scratch, writing checkpoints and the log to `out_dir`.
pub fn train(cfg: ExperimentConfig, out_dir: &Path) -> Result<Checkpoint> {
    run(Checkpoint::new(cfg)?, out_dir)
}

/// Continues the run saved at `path`.
pub fn resume(path: &Path, out_dir: &Path) -> Result<Checkpoint> {
    run(Checkpoint::load(path)?, out_dir)
}

/// Drives a run through its remaining stages.
pub fn run(mut ck: Checkpoint, out_dir: &Path) -> Result<Checkpoint> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let w = Writer {
        dir: out_dir.to_path_buf(),
        keep: ck.config.keep_checkpoints,
    };
    while ck.stage != Stage::Done {
        advance(&mut ck, &w)?;
        ck.save(&w.dir.join(LATEST_CHECKPOINT))?;
    }
    ck.save(&out_dir.join(FINAL_CHECKPOINT))?;
    write_log(&ck.log, &out_dir.join(TRAIN_LOG))?;
    Ok(ck)
}

fn next_stage(after: Stage, cfg: &ExperimentConfig) -> Stage {
    let alg = cfg.algorithm;
    let order = [Stage::Rl, Stage::Fallback, Stage::Supervised, Stage::Calibration, Stage::Done];
    let wanted = |s: Stage| match s {
        Stage::Fallback => alg == Algorithm::ModularSwitch,
        Stage::Supervised => alg.has_adapter(),
        Stage::Calibration => alg.uses_epinet(),
        _ => true,
    };
    let pos = order.iter().position(|&s| s == after).expect("known stage");
    order[pos + 1..].iter().copied().find(|&s| wanted(s)).unwrap_or(Stage::Done)
}

fn advance(ck: &mut Checkpoint, w: &Writer) -> Result<()> {
    let Checkpoint {
        config,
        config_hash,
        stage,
        rl,
        fallback,
        supervised,
        alpha,
        validation_u,
        log,
        version,
    } = ck;
    let version = *version;
    match *stage {
        Stage::Rl => {
            let mut snap = |s: &train::RlState, l: &[LogRow]| {
                w.snapshot(
                    CheckpointView {
                        version,
                        config,
                        config_hash,
                        stage: Stage::Rl,
                        rl: s,
                        fallback: fallback.as_ref(),
                        supervised: supervised.as_ref(),
                        alpha: alpha.as_ref(),
                        validation_u,
                        log: l,
                    },
                    s.update,
                )
            };
            rl_phase(rl, log, config, "rl", &mut snap)?;
        }
        Stage::Fallback => {
            let fcfg = fallback_config(config);
            if fallback.is_none() {
                *fallback = Some(RlState::new(&fcfg, stream::PHASE_FALLBACK)?);
            }
            let state = fallback.as_mut().expect("fallback state");
            let mut snap = |s: &train::RlState, l: &[LogRow]| {
                w.snapshot(
                    CheckpointView {
                        version,
                        config,
                        config_hash,
                        stage: Stage::Fallback,
                        rl,
                        fallback: Some(s),
                        supervised: supervised.as_ref(),
                        alpha: alpha.as_ref(),
                        validation_u,
                        log: l,
                    },
                    s.update,
                )
            };
            rl_phase(state, log, &fcfg, "fallback", &mut snap)?;
        }
        Stage::Supervised => {
            if supervised.is_none() {
                *supervised = Some(SupervisedState::new(config)?);
            }
            let state = supervised.as_mut().expect("supervised state");
            let mut snap = |s: &SupervisedState, l: &[LogRow]| {
                w.snapshot(
                    CheckpointView {
                        version,
                        config,
                        config_hash,
                        stage: Stage::Supervised,
                        rl,
                        fallback: fallback.as_ref(),
                        supervised: Some(s),
                        alpha: alpha.as_ref(),
                        validation_u,
                        log: l,
                    },
                    s.update,
                )
            };
            supervised_phase(state, &rl.ac, log, config, &mut snap)?;
        }
        Stage::Calibration => {
            let adapter = &supervised.as_ref().expect("supervised phase ran").adapter;
            let (p, us) = calibrate(&rl.ac, adapter, config)?;
            *alpha = Some(p);
            *validation_u = us;
        }
        Stage::Done => {}
    }
    *stage = next_stage(*stage, config);
    Ok(())
}

/// Refits the blend at new quantiles from the stored validation set.
pub fn recalibrate(ck: &mut Checkpoint, u_min: f64, u_max: f64) -> Result<()> {
    if ck.validation_u.is_empty() {
        return Err(Error::MissingCalibration);
    }
    ck.alpha = Some(finetune_alpha(&ck.validation_u, u_min, u_max, ck.config.alpha_at_max)?);
    Ok(())
}

pub fn write_log(log: &[LogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
