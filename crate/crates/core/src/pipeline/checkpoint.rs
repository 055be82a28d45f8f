use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::supervised::SupervisedState;
use super::train::{LogRow, RlState};
use crate::encoders::AlphaParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Next piece of work for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rl,
    Fallback,
    Supervised,
    Calibration,
    Done,
}

/// Complete run state. Saving and loading is exact, so a run resumed from
/// any checkpoint continues bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub stage: Stage,
    pub rl: RlState,
    /// Robust fallback policy of the modular-switch baseline.
    pub fallback: Option<RlState>,
    pub supervised: Option<SupervisedState>,
    pub alpha: Option<AlphaParams>,
    pub validation_u: Vec<f64>,
    pub log: Vec<LogRow>,
}

/// Borrowed form with the same serialized layout, for snapshots taken while
/// one part of the run is mutably borrowed.
#[derive(Serialize)]
pub struct CheckpointView<'a> {
    pub version: u32,
    pub config: &'a ExperimentConfig,
    pub config_hash: &'a str,
    pub stage: Stage,
    pub rl: &'a RlState,
    pub fallback: Option<&'a RlState>,
    pub supervised: Option<&'a SupervisedState>,
    pub alpha: Option<&'a AlphaParams>,
    pub validation_u: &'a [f64],
    pub log: &'a [LogRow],
}

impl CheckpointView<'_> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

impl Checkpoint {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let rl = RlState::new(&config, 0)?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config_hash: config.hash(),
            config,
            stage: Stage::Rl,
            rl,
            fallback: None,
            supervised: None,
            alpha: None,
            validation_u: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn view(&self) -> CheckpointView<'_> {
        CheckpointView {
            version: self.version,
            config: &self.config,
            config_hash: &self.config_hash,
            stage: self.stage,
            rl: &self.rl,
            fallback: self.fallback.as_ref(),
            supervised: self.supervised.as_ref(),
            alpha: self.alpha.as_ref(),
            validation_u: &self.validation_u,
            log: &self.log,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.view().save(path)
    }

    /// Loads and checks version and config hash.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_slice(&bytes)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        if ck.config.hash() != ck.config_hash {
            return Err(Error::Config(format!("{}: config hash mismatch", path.display())));
        }
        Ok(ck)
    }

    /// The calibrated blend, or an error for a run that has none.
    pub fn alpha_params(&self) -> Result<&AlphaParams> {
        self.alpha.as_ref().ok_or(Error::MissingCalibration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            num_envs: 4,
            steps_per_update: 4,
            rl_updates: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = Checkpoint::new(tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        back.save(&dir.path().join("d.json")).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(dir.path().join("d.json")).unwrap());
    }

    #[test]
    fn missing_calibration_is_reported() {
        let ck = Checkpoint::new(tiny()).unwrap();
        assert!(matches!(ck.alpha_params(), Err(Error::MissingCalibration)));
    }

    #[test]
    fn tampered_config_is_rejected() {
        let mut ck = Checkpoint::new(tiny()).unwrap();
        ck.config.seed = 99;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        ck.save(&p).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Config(_))));
    }
}
