use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{subset_indices, Corpus, CorpusKind, Split};
use crate::diffusion::ScheduleSpec;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, DenoiserParams, TrainState};
use crate::nn::{clip_grad_norm, Adam, AdamConfig};
use crate::rng::{derive_seed, rng_for};
use crate::scalar::Scalar;

use super::loss::{diffusion_loss_and_grad, TrainingPair};

pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const TRAIN_LOG_FILE: &str = "train.log";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub schedule: ScheduleSpec,
    /// Share of the training split used (fine-tuning subsets).
    pub fraction: f64,
    /// Only `"cpu"` is implemented.
    pub device: String,
    pub grad_clip: Option<f64>,
    /// Per-epoch checkpoints and the step log go here when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            learning_rate: 1e-4,
            seed: 0,
            schedule: ScheduleSpec::default(),
            fraction: 1.0,
            device: "cpu".into(),
            grad_clip: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {} must lie in (0, 1]", self.fraction)));
        }
        if self.device != "cpu" {
            return Err(Error::Config(format!("device {:?} is not available", self.device)));
        }
        self.schedule.build()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub phase: String,
    pub samples_used: usize,
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub wall_clock_s: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Normalized-depth / foreground pairs from the training split of a
/// pretraining or fine-tuning corpus. With `fraction < 1` a seeded subset of
/// `floor(fraction * n)` samples is kept.
pub fn corpus_training_pairs<S: Scalar>(corpus: &Corpus<S>, fraction: f64, seed: u64) -> Result<Vec<TrainingPair<S>>> {
    if !matches!(corpus.manifest.kind, CorpusKind::Pretrain | CorpusKind::Finetune) {
        return Err(Error::Config(format!(
            "diffusion training needs a pretrain or finetune corpus, got {}",
            corpus.manifest.kind.name()
        )));
    }
    let train: Vec<_> = corpus
        .manifest
        .samples
        .iter()
        .zip(&corpus.samples)
        .filter(|(_, s)| s.split == Split::Train)
        .collect();
    let keep = subset_indices(train.len(), fraction, derive_seed(seed, "fraction"))?;
    if keep.is_empty() {
        return Err(Error::Config(format!(
            "fraction {fraction} of {} training samples selects nothing",
            train.len()
        )));
    }
    Ok(keep
        .into_iter()
        .map(|i| {
            let (rec, s) = train[i];
            TrainingPair {
                id: rec.index as u64,
                cond: s.depth.normalized(),
                y0: s.foreground(),
            }
        })
        .collect())
}

/// Adam on the denoising loss from `init`, with a fresh optimizer.
pub fn train_diffusion(
    config: &TrainConfig,
    pairs: &[TrainingPair<f32>],
    init: DenoiserParams<f32>,
    phase: &str,
) -> Result<(DenoiserParams<f32>, TrainLog)> {
    config.validate()?;
    let adam = Adam::new(adam_config(config), init.param_count());
    let state = TrainState {
        phase: phase.to_string(),
        seed: config.seed,
        ..TrainState::default()
    };
    run(config, pairs, init, adam, state)
}

/// Continue a run from a per-epoch checkpoint; the remaining epochs replay
/// exactly as in an uninterrupted run.
pub fn resume_diffusion(
    config: &TrainConfig,
    pairs: &[TrainingPair<f32>],
    checkpoint: Checkpoint,
) -> Result<(DenoiserParams<f32>, TrainLog)> {
    config.validate()?;
    if checkpoint.schedule != config.schedule {
        return Err(Error::Checkpoint("checkpoint was trained with a different schedule".into()));
    }
    if checkpoint.train_state.seed != config.seed {
        return Err(Error::Checkpoint("checkpoint was trained with a different seed".into()));
    }
    let params = checkpoint.params()?;
    let mut adam = checkpoint
        .optimizer
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
    adam.config = adam_config(config);
    run(config, pairs, params, adam, checkpoint.train_state)
}

fn adam_config(config: &TrainConfig) -> AdamConfig {
    AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    }
}

fn append_log(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

fn run(
    config: &TrainConfig,
    pairs: &[TrainingPair<f32>],
    mut params: DenoiserParams<f32>,
    mut adam: Adam<f32>,
    mut state: TrainState,
) -> Result<(DenoiserParams<f32>, TrainLog)> {
    if pairs.is_empty() {
        return Err(Error::Argument("no training pairs".into()));
    }
    let schedule = config.schedule.build()?;
    let started = Instant::now();
    let log_path = match &config.checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(dir.join(TRAIN_LOG_FILE))
        }
        None => None,
    };
    let mut checkpoint = None;
    for epoch in state.epochs_done..config.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng_for(config.seed, &format!("epoch/{epoch}")));
        let mut epoch_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainingPair<f32>> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let step_seed = derive_seed(config.seed, &format!("step/{}", state.steps_done));
            let (loss, mut grads) = diffusion_loss_and_grad(&params, &batch, &schedule, step_seed)?;
            if let Some(max) = config.grad_clip {
                clip_grad_norm(&mut grads, max);
            }
            adam.update(params.values_mut(), &grads);
            if !params.all_finite() {
                return Err(Error::TrainingHealth(format!(
                    "parameters became non-finite at step {}",
                    state.steps_done
                )));
            }
            state.steps_done += 1;
            state.step_losses.push(loss);
            epoch_sum += loss;
            batches += 1;
            if let Some(p) = &log_path {
                append_log(
                    p,
                    &format!(
                        "step={} epoch={} loss={loss:.6e} lr={:e} wall={:.3}",
                        state.steps_done,
                        epoch + 1,
                        config.learning_rate,
                        started.elapsed().as_secs_f64()
                    ),
                )?;
            }
        }
        let mean = epoch_sum / batches as f64;
        state.epoch_losses.push(mean);
        state.epochs_done = epoch + 1;
        let initial = state.step_losses[0];
        if mean > 10.0 * initial {
            return Err(Error::TrainingHealth(format!(
                "diverged: epoch {} mean loss {mean:.4e} exceeds ten times the initial {initial:.4e}",
                epoch + 1
            )));
        }
        if let Some(dir) = &config.checkpoint_dir {
            let path = dir.join(LATEST_CHECKPOINT);
            Checkpoint::new(&params, config.schedule, Some(adam.clone()), state.clone()).save(&path)?;
            checkpoint = Some(path);
        }
    }
    let log = TrainLog {
        phase: state.phase.clone(),
        samples_used: pairs.len(),
        step_losses: state.step_losses,
        epoch_losses: state.epoch_losses,
        wall_clock_s: started.elapsed().as_secs_f64(),
        checkpoint,
    };
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::model::{init_denoiser, DenoiserConfig};

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            image_size: (8, 8),
            base_channels: 4,
            channel_multipliers: vec![1, 2],
            blocks_per_stage: 1,
            noise_embed_dim: 8,
            norm_groups: 2,
        }
    }

    fn pairs(n: usize) -> Vec<TrainingPair<f32>> {
        (0..n)
            .map(|i| TrainingPair {
                id: i as u64,
                cond: Image::from_fn(1, 8, 8, |_, y, x| ((x + y + i) % 5) as f32 / 4.0),
                y0: Image::from_fn(3, 8, 8, |c, y, x| (((c + x * y + i) % 7) as f32 / 7.0 - 0.5) * 0.4),
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 3,
            learning_rate: 1e-3,
            seed: 4,
            schedule: ScheduleSpec {
                timesteps: 20,
                beta_start: 1e-3,
                beta_end: 0.2,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_reproducible() {
        let p = pairs(7);
        let (a, la) = train_diffusion(&cfg(), &p, init_denoiser(&tiny(), 1).unwrap(), "t").unwrap();
        let (b, lb) = train_diffusion(&cfg(), &p, init_denoiser(&tiny(), 1).unwrap(), "t").unwrap();
        assert_eq!(la.step_losses, lb.step_losses);
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(la.step_losses.len(), 9);
        assert_eq!(la.epoch_losses.len(), 3);
        assert!(la.step_losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let p = pairs(7);
        let mut c = cfg();
        let (_, full) = train_diffusion(&c, &p, init_denoiser(&tiny(), 1).unwrap(), "t").unwrap();
        c.epochs = 1;
        c.checkpoint_dir = Some(dir.path().to_path_buf());
        let (_, first) = train_diffusion(&c, &p, init_denoiser(&tiny(), 1).unwrap(), "t").unwrap();
        let ck = Checkpoint::load(&first.checkpoint.unwrap()).unwrap();
        c.epochs = 3;
        let (_, resumed) = resume_diffusion(&c, &p, ck).unwrap();
        assert_eq!(resumed.step_losses.len(), full.step_losses.len());
        for (a, b) in resumed.step_losses.iter().zip(&full.step_losses) {
            assert!((a - b).abs() < 1e-5);
        }
        let log = fs::read_to_string(dir.path().join(TRAIN_LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 9);
    }

    #[test]
    fn divergence_aborts() {
        let mut c = cfg();
        c.learning_rate = 10.0;
        c.epochs = 5;
        let err = train_diffusion(&c, &pairs(7), init_denoiser(&tiny(), 1).unwrap(), "t").unwrap_err();
        assert!(matches!(err, Error::TrainingHealth(_)), "{err:?}");
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.batch_size = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = cfg();
        c.fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.device = "cuda".into();
        assert!(c.validate().is_err());
    }
}
