use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleSpec;
use crate::error::{Error, Result};
use crate::nn::Adam;

use super::{DenoiserConfig, DenoiserParams};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a training run stands when a checkpoint is written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub phase: String,
    pub seed: u64,
    pub epochs_done: usize,
    pub steps_done: u64,
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Parameters, architecture, schedule descriptor and optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: DenoiserConfig,
    pub schedule: ScheduleSpec,
    pub params: Vec<f32>,
    pub optimizer: Option<Adam<f32>>,
    pub train_state: TrainState,
}

impl Checkpoint {
    pub fn new(
        params: &DenoiserParams<f32>,
        schedule: ScheduleSpec,
        optimizer: Option<Adam<f32>>,
        train_state: TrainState,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: params.config().clone(),
            schedule,
            params: params.values().to_vec(),
            optimizer,
            train_state,
        }
    }

    /// Written to a sibling temporary file first, then renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let body = serde_json::to_vec(self).map_err(|e| Error::io(path, e))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&body).map_err(|e| Error::io(path, e))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{} has format version {}, this build reads version {CHECKPOINT_VERSION}",
                path.display(),
                ck.version
            )));
        }
        if let Some(opt) = &ck.optimizer {
            if opt.len() != ck.params.len() {
                return Err(Error::Checkpoint("optimizer state does not match parameter count".into()));
            }
        }
        Ok(ck)
    }

    /// Load and require an exact architecture match.
    pub fn load_expecting(path: &Path, config: &DenoiserConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if &ck.config != config {
            return Err(Error::Checkpoint(format!(
                "{} was trained with {:?}, but {:?} was requested",
                path.display(),
                ck.config,
                config
            )));
        }
        Ok(ck)
    }

    pub fn params(&self) -> Result<DenoiserParams<f32>> {
        DenoiserParams::from_values(&self.config, self.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_denoiser;
    use crate::nn::AdamConfig;

    fn cfg() -> DenoiserConfig {
        DenoiserConfig {
            image_size: (16, 16),
            base_channels: 4,
            channel_multipliers: vec![1, 2],
            blocks_per_stage: 1,
            noise_embed_dim: 8,
            norm_groups: 2,
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let p = init_denoiser::<f32>(&cfg(), 5).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), p.param_count());
        let mut vals = p.values().to_vec();
        let g: Vec<f32> = (0..vals.len()).map(|i| (i as f32 * 0.37).sin()).collect();
        adam.update(&mut vals, &g);
        let state = TrainState {
            phase: "pretrain".into(),
            seed: 3,
            epochs_done: 2,
            steps_done: 1,
            step_losses: vec![0.9],
            epoch_losses: vec![0.9],
        };
        let ck = Checkpoint::new(&p, ScheduleSpec::default(), Some(adam), state);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap().checksum(), p.checksum());
    }

    #[test]
    fn mismatched_config_is_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let p = init_denoiser::<f32>(&cfg(), 5).unwrap();
        Checkpoint::new(&p, ScheduleSpec::default(), None, TrainState::default())
            .save(&path)
            .unwrap();
        let mut other = cfg();
        other.base_channels = 8;
        assert!(matches!(
            Checkpoint::load_expecting(&path, &other),
            Err(Error::Checkpoint(_))
        ));
        assert!(Checkpoint::load_expecting(&path, &cfg()).is_ok());
    }

    #[test]
    fn version_and_size_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let p = init_denoiser::<f32>(&cfg(), 5).unwrap();
        let mut ck = Checkpoint::new(&p, ScheduleSpec::default(), None, TrainState::default());
        ck.version = 99;
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
        let mut ck = Checkpoint::new(&p, ScheduleSpec::default(), None, TrainState::default());
        ck.params.pop();
        ck.save(&path).unwrap();
        assert!(Checkpoint::load(&path).unwrap().params().is_err());
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing")),
            Err(Error::Persistence { .. })
        ));
    }
}
