use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use tactile_diffusion::dataset::GenerationConfig;
use tactile_diffusion::diffusion::ScheduleSpec;
use tactile_diffusion::eval::HarnessConfig;
use tactile_diffusion::model::DenoiserConfig;
use tactile_diffusion::rng::derive_seed;
use tactile_diffusion::sim::SensorConfig;
use tactile_diffusion::training::TrainConfig;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "TACDIFF_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Train,
    Finetune,
    Sample,
    Eval,
    Compare,
}

/// One invocation: which stage to run and how to configure it.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub force: bool,
    /// Dotted `key=value` pairs applied on top of the config file.
    pub overrides: Vec<String>,
}

impl RunConfig {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            command,
            config_path: None,
            seed: None,
            out: out.into(),
            force: false,
            overrides: Vec::new(),
        }
    }

    /// Defaults, then the config file, then `--set` overrides, then `--seed`.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let file = match &self.config_path {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?,
            ),
            None => None,
        };
        let mut cfg = ExperimentConfig::from_layers(file.as_deref(), &self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sampling budget for the `sample` stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// How many fine-tuning test pairs to sample for the similarity report.
    pub eval_images: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { eval_images: 30 }
    }
}

/// Everything a run needs, read from one TOML file.
///
/// Stage seeds (`pretrain.seed`, `finetune.seed`, `harness.classifier.seed`)
/// are overwritten from the top-level `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Rayon worker count; `0` uses every core.
    pub threads: usize,
    /// Full fine-tuning pose grid per character instead of a subset.
    pub full_pose_grid: bool,
    pub sensor: SensorConfig,
    pub generation: GenerationConfig,
    pub model: DenoiserConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub sample: SampleConfig,
    pub harness: HarnessConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let schedule = ScheduleSpec {
            timesteps: 100,
            beta_start: 5e-4,
            beta_end: 0.1,
        };
        let pretrain = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 1e-3,
            schedule,
            grad_clip: Some(1.0),
            ..TrainConfig::default()
        };
        let finetune = TrainConfig {
            epochs: 10,
            fraction: 0.2,
            ..pretrain.clone()
        };
        ExperimentConfig {
            seed: 0,
            threads: 0,
            full_pose_grid: false,
            sensor: SensorConfig::default(),
            generation: GenerationConfig::default(),
            model: DenoiserConfig::default(),
            pretrain,
            finetune,
            sample: SampleConfig::default(),
            harness: HarnessConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Deep-merges an optional TOML document and `key=value` overrides onto
    /// the defaults, so partial tables are fine.
    pub fn from_layers(file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut tree = toml::Value::try_from(ExperimentConfig::default()).context("serializing defaults")?;
        if let Some(text) = file {
            let doc: toml::Table = toml::from_str(text).context("parsing config")?;
            merge(&mut tree, toml::Value::Table(doc));
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{o}` is not key=value"))?;
            set_path(&mut tree, key.trim(), parse_scalar(raw.trim()))?;
        }
        let mut cfg: ExperimentConfig = tree.try_into().context("invalid config")?;
        if cfg.full_pose_grid {
            cfg.generation.finetune.per_character = None;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.model.validate()?;
        if self.pretrain.schedule != self.finetune.schedule {
            bail!("pretrain and finetune must share a noise schedule");
        }
        let (h, w) = self.sensor.resolution;
        if self.model.image_size != (h, w) || self.harness.classifier.arch.image_size != (h, w) {
            bail!("model and classifier image sizes must match the sensor resolution {h}x{w}");
        }
        if self.sample.eval_images == 0 {
            bail!("sample.eval_images must be positive");
        }
        Ok(())
    }

    /// Stage configs with seeds derived from the top-level seed and
    /// checkpoint directories under `out`.
    pub fn pretrain_config(&self, out: &Path) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "pretrain"),
            checkpoint_dir: Some(out.join(crate::layout::PRETRAIN_DIR)),
            ..self.pretrain.clone()
        }
    }

    pub fn finetune_config(&self, out: &Path) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "finetune"),
            checkpoint_dir: Some(out.join(crate::layout::FINETUNE_DIR)),
            ..self.finetune.clone()
        }
    }

    pub fn harness_config(&self) -> HarnessConfig {
        let mut h = self.harness.clone();
        h.classifier.seed = derive_seed(self.seed, "classifier");
        h
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

fn merge(base: &mut toml::Value, layer: toml::Value) {
    match (base, layer) {
        (toml::Value::Table(b), toml::Value::Table(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

// Anything that parses as a TOML value keeps its type; the rest is a string.
fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("`{}` is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    bail!("empty override key")
}
