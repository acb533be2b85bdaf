use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tactile_diffusion::dataset::io::{read_rgb_png, write_rgb_png};
use tactile_diffusion::dataset::{build_corpus, load_corpus, Corpus, CorpusKind, CorpusManifest, Split, MANIFEST_FILE};
use tactile_diffusion::eval::{emit_panels, generate_images, run_comparison, ComparisonReport, SimilarityReport};
use tactile_diffusion::image::TactileImage;
use tactile_diffusion::model::{init_denoiser, Checkpoint, DenoiserParams};
use tactile_diffusion::rng::derive_seed;
use tactile_diffusion::sim::SensorSpec;
use tactile_diffusion::training::{corpus_training_pairs, resume_diffusion, train_diffusion, TrainLog, LATEST_CHECKPOINT};

use crate::config::{Command, ExperimentConfig, RunConfig};
use crate::layout::*;

/// What a stage produced, or found already in place.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub artifacts: Vec<PathBuf>,
    pub skipped: bool,
}

impl StageOutcome {
    fn written(artifacts: Vec<PathBuf>) -> Self {
        StageOutcome {
            artifacts,
            skipped: false,
        }
    }

    fn skipped(artifacts: Vec<PathBuf>) -> Self {
        StageOutcome {
            artifacts,
            skipped: true,
        }
    }
}

/// Record of one generated image set under `samples/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub corpus: CorpusKind,
    /// Index into the corpus samples for each generated file.
    pub indices: Vec<usize>,
    pub files: Vec<String>,
    pub seed: u64,
    pub checkpoint_checksum: String,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub generated: SimilarityReport,
    /// Scores of the bare no-contact image against the same targets.
    pub background_only: SimilarityReport,
}

pub fn run(rc: &RunConfig) -> Result<StageOutcome> {
    let cfg = rc.experiment()?;
    fs::create_dir_all(&rc.out).with_context(|| format!("creating output directory {}", rc.out.display()))?;
    fs::write(rc.out.join(CONFIG_FILE), cfg.to_toml()).context("writing resolved config")?;
    let go = || match rc.command {
        Command::Simulate => cmd_simulate(&cfg, &rc.out, rc.force),
        Command::Train => cmd_train(&cfg, &rc.out, rc.force),
        Command::Finetune => cmd_finetune(&cfg, &rc.out, rc.force),
        Command::Sample => cmd_sample(&cfg, &rc.out, rc.force),
        Command::Eval => cmd_eval(&cfg, &rc.out, rc.force),
        Command::Compare => cmd_compare(&cfg, &rc.out, rc.force),
    };
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .context("building worker pool")?
            .install(go)
    } else {
        go()
    }
}

fn sensor(cfg: &ExperimentConfig) -> Result<SensorSpec> {
    Ok(SensorSpec::new(cfg.sensor.clone())?)
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing artifact {} (run `tacdiff {stage}` first)", path.display());
    }
    Ok(())
}

fn load_kind(out: &Path, kind: CorpusKind) -> Result<Corpus<f32>> {
    let dir = corpus_dir(out, kind);
    require(&dir.join(MANIFEST_FILE), "simulate")?;
    load_corpus(&dir).with_context(|| format!("loading {} corpus", kind.name()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Renders all four corpora. An existing corpus is kept when its manifest
/// verifies and was built from the same seed and sensor.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<StageOutcome> {
    let sensor = sensor(cfg)?;
    let mut artifacts = Vec::new();
    let mut skipped = true;
    for kind in CorpusKind::ALL {
        let dir = corpus_dir(out, kind);
        let manifest = dir.join(MANIFEST_FILE);
        if !force && manifest.exists() {
            let existing = CorpusManifest::load(&dir)?;
            if existing.seed != cfg.seed || existing.sensor_hash != sensor.hash() {
                bail!(
                    "{} was built with different settings; rerun with --force to replace it",
                    dir.display()
                );
            }
            existing.verify(&dir)?;
            eprintln!("{}: up to date ({} samples)", kind.name(), existing.samples.len());
        } else {
            if dir.exists() {
                fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
            }
            let t0 = Instant::now();
            let m = build_corpus(kind, &sensor, &cfg.generation, cfg.seed, &dir)?;
            eprintln!("{}: {} samples in {:.1}s", kind.name(), m.samples.len(), t0.elapsed().as_secs_f64());
            skipped = false;
        }
        artifacts.push(manifest);
    }
    Ok(StageOutcome { artifacts, skipped })
}

fn train_stage(
    cfg: &ExperimentConfig,
    out: &Path,
    force: bool,
    kind: CorpusKind,
    phase: &str,
    stage_dir: &str,
) -> Result<StageOutcome> {
    let dir = out.join(stage_dir);
    let log_path = dir.join(TRAIN_SUMMARY_FILE);
    let ckpt = dir.join(LATEST_CHECKPOINT);
    if !force && log_path.exists() && ckpt.exists() {
        Checkpoint::load_expecting(&ckpt, &cfg.model)?;
        eprintln!("{phase}: up to date");
        return Ok(StageOutcome::skipped(vec![ckpt, log_path]));
    }
    let tc = if kind == CorpusKind::Pretrain {
        cfg.pretrain_config(out)
    } else {
        cfg.finetune_config(out)
    };
    let corpus = load_kind(out, kind)?;
    let pairs = corpus_training_pairs(&corpus, tc.fraction, tc.seed)?;
    eprintln!("{phase}: {} pairs, {} epochs", pairs.len(), tc.epochs);

    let (params, log) = if !force && ckpt.exists() {
        let partial = Checkpoint::load_expecting(&ckpt, &cfg.model)?;
        if partial.train_state.phase != phase || partial.train_state.seed != tc.seed {
            bail!("{} belongs to another run; rerun with --force", ckpt.display());
        }
        eprintln!("{phase}: resuming after epoch {}", partial.train_state.epochs_done);
        resume_diffusion(&tc, &pairs, partial)?
    } else {
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        let init = if kind == CorpusKind::Pretrain {
            init_denoiser(&cfg.model, derive_seed(cfg.seed, "init"))?
        } else {
            let pre = out.join(PRETRAIN_DIR).join(LATEST_CHECKPOINT);
            require(&out.join(PRETRAIN_DIR).join(TRAIN_SUMMARY_FILE), "train")?;
            let c = Checkpoint::load_expecting(&pre, &cfg.model)?;
            if c.schedule != tc.schedule {
                bail!("pretrained checkpoint uses a different noise schedule");
            }
            c.params()?
        };
        train_diffusion(&tc, &pairs, init, phase)?
    };
    if !params.all_finite() {
        bail!("{phase} produced non-finite parameters");
    }
    if let (Some(first), Some(last)) = (log.epoch_losses.first(), log.epoch_losses.last()) {
        eprintln!("{phase}: loss {first:.4} -> {last:.4} in {:.1}s", log.wall_clock_s);
    }
    write_json(&log_path, &log)?;
    Ok(StageOutcome::written(vec![ckpt, log_path]))
}

/// Pretrains the denoiser on the primitive corpus.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<StageOutcome> {
    train_stage(cfg, out, force, CorpusKind::Pretrain, "pretrain", PRETRAIN_DIR)
}

/// Continues from the pretrained checkpoint on a share of the braille corpus.
pub fn cmd_finetune(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<StageOutcome> {
    train_stage(cfg, out, force, CorpusKind::Finetune, "finetune", FINETUNE_DIR)
}

fn finetuned(cfg: &ExperimentConfig, out: &Path) -> Result<(DenoiserParams<f32>, Checkpoint)> {
    let path = out.join(FINETUNE_DIR).join(LATEST_CHECKPOINT);
    require(&out.join(FINETUNE_DIR).join(TRAIN_SUMMARY_FILE), "finetune")?;
    let c = Checkpoint::load_expecting(&path, &cfg.model)?;
    Ok((c.params()?, c))
}

fn sample_set_valid(dir: &Path) -> bool {
    read_json::<SampleSet>(&dir.join(SAMPLE_INDEX_FILE))
        .map(|s| s.files.iter().all(|f| dir.join(f).exists()))
        .unwrap_or(false)
}

fn sample_one_set(
    params: &DenoiserParams<f32>,
    ckpt: &Checkpoint,
    corpus: &Corpus<f32>,
    indices: Vec<usize>,
    seed: u64,
    dir: &Path,
) -> Result<SampleSet> {
    let schedule = ckpt.schedule.build()?;
    let depths: Vec<_> = indices.iter().map(|&i| corpus.samples[i].depth.clone()).collect();
    let t0 = Instant::now();
    let images = generate_images(params, &schedule, &depths, &corpus.background, seed)?;
    let wall = t0.elapsed().as_secs_f64();
    eprintln!(
        "sampled {} images for {} in {wall:.1}s ({:.2}s per image)",
        images.len(),
        corpus.manifest.kind.name(),
        wall / images.len().max(1) as f64
    );
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::with_capacity(images.len());
    for (img, &i) in images.iter().zip(&indices) {
        let name = format!("{i:06}.png");
        write_rgb_png(&dir.join(&name), img, &[("object", corpus.samples[i].object_id.clone())])?;
        files.push(name);
    }
    let set = SampleSet {
        corpus: corpus.manifest.kind,
        indices,
        files,
        seed,
        checkpoint_checksum: params.checksum(),
        wall_clock_s: wall,
    };
    write_json(&dir.join(SAMPLE_INDEX_FILE), &set)?;
    Ok(set)
}

/// Samples the fine-tuned model on the first fine-tuning test conditions
/// and on every classifier training condition.
pub fn cmd_sample(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<StageOutcome> {
    let eval_dir = out.join(SAMPLES_DIR).join(EVAL_SAMPLES);
    let cls_dir = out.join(SAMPLES_DIR).join(CLASSIFIER_SAMPLES);
    let artifacts = vec![eval_dir.join(SAMPLE_INDEX_FILE), cls_dir.join(SAMPLE_INDEX_FILE)];
    if !force && sample_set_valid(&eval_dir) && sample_set_valid(&cls_dir) {
        eprintln!("sample: up to date");
        return Ok(StageOutcome::skipped(artifacts));
    }
    let (params, ckpt) = finetuned(cfg, out)?;

    if force || !sample_set_valid(&eval_dir) {
        let ft = load_kind(out, CorpusKind::Finetune)?;
        let test: Vec<usize> = (0..ft.samples.len())
            .filter(|&i| ft.samples[i].split == Split::Test)
            .take(cfg.sample.eval_images)
            .collect();
        sample_one_set(&params, &ckpt, &ft, test, derive_seed(cfg.seed, "sample/eval"), &eval_dir)?;
    }
    if force || !sample_set_valid(&cls_dir) {
        let ct = load_kind(out, CorpusKind::ClassifierTrain)?;
        let all = (0..ct.samples.len()).collect();
        sample_one_set(&params, &ckpt, &ct, all, derive_seed(cfg.seed, "sample/classifier"), &cls_dir)?;
    }
    Ok(StageOutcome::written(artifacts))
}

fn load_sample_set(dir: &Path, corpus: &Corpus<f32>) -> Result<(SampleSet, Vec<TactileImage<f32>>)> {
    let index = dir.join(SAMPLE_INDEX_FILE);
    require(&index, "sample")?;
    let set: SampleSet = read_json(&index)?;
    if set.corpus != corpus.manifest.kind || set.indices.iter().any(|&i| i >= corpus.samples.len()) {
        bail!("{} does not match the {} corpus", index.display(), corpus.manifest.kind.name());
    }
    let images = set
        .files
        .iter()
        .map(|f| read_rgb_png(&dir.join(f)).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    Ok((set, images))
}

/// SSIM/MSE of the sampled fine-tuning test images against their oracle
/// targets, plus comparison panels.
pub fn cmd_eval(_cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<StageOutcome> {
    let dir = out.join(EVAL_DIR);
    let report_path = dir.join(SIMILARITY_FILE);
    if !force && report_path.exists() && read_json::<EvalSummary>(&report_path).is_ok() {
        eprintln!("eval: up to date");
        return Ok(StageOutcome::skipped(vec![report_path]));
    }
    let ft = load_kind(out, CorpusKind::Finetune)?;
    let (set, generated) = load_sample_set(&out.join(SAMPLES_DIR).join(EVAL_SAMPLES), &ft)?;
    let summary = evaluate(&ft, &set.indices, &generated)?;
    eprintln!(
        "eval: mean SSIM {:.4} MSE {:.2} (background only: SSIM {:.4} MSE {:.2})",
        summary.generated.mean_ssim, summary.generated.mean_mse, summary.background_only.mean_ssim, summary.background_only.mean_mse
    );
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let samples: Vec<_> = set.indices.iter().map(|&i| ft.samples[i].clone()).collect();
    let panels = emit_panels(&samples, &generated, &dir.join(PANELS_DIR))?;
    write_json(&report_path, &summary)?;
    let mut artifacts = vec![report_path];
    artifacts.extend(panels);
    Ok(StageOutcome::written(artifacts))
}

/// Similarity of `generated[k]` against the target of `corpus.samples[indices[k]]`.
pub fn evaluate(corpus: &Corpus<f32>, indices: &[usize], generated: &[TactileImage<f32>]) -> Result<EvalSummary> {
    let ids: Vec<String> = indices
        .iter()
        .map(|&i| format!("{}#{i}", corpus.samples[i].object_id))
        .collect();
    let targets: Vec<_> = indices.iter().map(|&i| corpus.samples[i].target.clone()).collect();
    let backgrounds: Vec<_> = indices.iter().map(|_| (*corpus.background).clone()).collect();
    Ok(EvalSummary {
        generated: SimilarityReport::compute(&ids, generated, &targets)?,
        background_only: SimilarityReport::compute(&ids, &backgrounds, &targets)?,
    })
}

/// Trains the five classifier variants and scores them on the oracle test set.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<StageOutcome> {
    let dir = out.join(COMPARE_DIR);
    let report_path = dir.join(REPORT_FILE);
    let table_path = dir.join(REPORT_TABLE_FILE);
    if !force && report_path.exists() && read_json::<ComparisonReport>(&report_path).is_ok() {
        eprintln!("compare: up to date");
        return Ok(StageOutcome::skipped(vec![report_path, table_path]));
    }
    let train = load_kind(out, CorpusKind::ClassifierTrain)?;
    let test = load_kind(out, CorpusKind::ClassifierTest)?;
    let (set, generated) = load_sample_set(&out.join(SAMPLES_DIR).join(CLASSIFIER_SAMPLES), &train)?;
    if set.indices != (0..train.samples.len()).collect::<Vec<_>>() {
        bail!("classifier samples must cover every training condition in order; rerun `tacdiff sample --force`");
    }
    let t0 = Instant::now();
    let report = run_comparison(&train, &test, &generated, &cfg.harness_config())?;
    let table = report.to_table();
    eprintln!("{table}");
    eprintln!("compare: {:.1}s", t0.elapsed().as_secs_f64());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&report_path, &report)?;
    fs::write(&table_path, table).with_context(|| format!("writing {}", table_path.display()))?;
    Ok(StageOutcome::written(vec![report_path, table_path]))
}

/// The stage logs of a finished training run.
pub fn read_train_log(out: &Path, stage_dir: &str) -> Result<TrainLog> {
    read_json(&out.join(stage_dir).join(TRAIN_SUMMARY_FILE))
}
