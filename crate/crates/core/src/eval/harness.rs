use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::io::write_rgb_png;
use crate::dataset::{composite_background, subset_indices, Corpus, CorpusKind, PairedSample};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::eval::metrics::{classifier_metrics, mse, ssim, ClassifierMetrics};
use crate::image::{DepthMap, Image, TactileImage};
use crate::model::DenoiserParams;
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::training::{train_classifier, ClassifierConfig, ClassifierParams, LabeledImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub id: String,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub pairs: Vec<PairScore>,
    pub mean_ssim: f64,
    pub mean_mse: f64,
}

impl SimilarityReport {
    pub fn compute<S: Scalar>(ids: &[String], generated: &[TactileImage<S>], targets: &[TactileImage<S>]) -> Result<Self> {
        if generated.is_empty() || generated.len() != targets.len() || ids.len() != targets.len() {
            return Err(Error::Argument(format!(
                "need matching non-empty lists: {} ids, {} generated, {} targets",
                ids.len(),
                generated.len(),
                targets.len()
            )));
        }
        let pairs = ids
            .par_iter()
            .zip(generated.par_iter().zip(targets.par_iter()))
            .map(|(id, (g, t))| {
                Ok(PairScore {
                    id: id.clone(),
                    ssim: ssim(g, t)?,
                    mse: mse(g, t)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = pairs.len() as f64;
        Ok(SimilarityReport {
            mean_ssim: pairs.iter().map(|p| p.ssim).sum::<f64>() / n,
            mean_mse: pairs.iter().map(|p| p.mse).sum::<f64>() / n,
            pairs,
        })
    }
}

/// Diffusion samples composited onto `background`; item `i` samples with a
/// seed derived from `seed` and `i`.
pub fn generate_images<S: Scalar>(
    params: &DenoiserParams<S>,
    schedule: &NoiseSchedule,
    depths: &[DepthMap<S>],
    background: &TactileImage<S>,
    seed: u64,
) -> Result<Vec<TactileImage<S>>> {
    depths
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let fg = params.sample(d, schedule, derive_seed(seed, &format!("sample/{i}")))?;
            composite_background(&fg, background)
        })
        .collect()
}

/// Normalized depth repeated over three channels, the raw simulator view.
pub fn sim_image<S: Scalar>(depth: &DepthMap<S>) -> TactileImage<S> {
    let n = depth.normalized();
    Image::from_fn(3, n.height(), n.width(), |_, y, x| n.at(0, y, x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub classifier: ClassifierConfig,
    /// Share of the oracle training images used by the fine-tuned sim row.
    pub finetune_fraction: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            classifier: ClassifierConfig::default(),
            finetune_fraction: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishedReference {
    pub accuracy_pct: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub source: String,
    pub finetune_pct: Option<f64>,
    pub train_images: usize,
    pub metrics: ClassifierMetrics,
    /// Published result for the matching row, for context only.
    pub published: Option<PublishedReference>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub averaging: String,
    pub test_images: usize,
    pub rows: Vec<ComparisonRow>,
    pub warnings: Vec<String>,
}

impl ComparisonReport {
    pub fn row(&self, source: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.source == source)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "# braille classification, {} test images, {}-averaged precision/recall\n",
            self.test_images, self.averaging
        );
        s.push_str(&format!(
            "{:<18} {:>6} {:>7} {:>9} {:>7}   {:>18}\n",
            "source", "ft %", "acc %", "precision", "recall", "published acc/P/R"
        ));
        for r in &self.rows {
            let ft = r.finetune_pct.map(|p| format!("{p:.0}")).unwrap_or_else(|| "-".into());
            let published = r
                .published
                .map(|p| format!("{:.2}/{:.2}/{:.2}", p.accuracy_pct, p.precision, p.recall))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "{:<18} {:>6} {:>7.2} {:>9.3} {:>7.3}   {:>18}\n",
                r.source, ft, r.metrics.accuracy_pct, r.metrics.precision, r.metrics.recall, published
            ));
        }
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

pub const SOURCE_SIM: &str = "sim";
pub const SOURCE_SIM_AUG: &str = "sim+aug";
pub const SOURCE_SIM_FINETUNE: &str = "sim+finetune";
pub const SOURCE_DIFFUSION: &str = "diffusion";
pub const SOURCE_REAL: &str = "real";

fn published(acc: f64, p: f64, r: f64) -> Option<PublishedReference> {
    Some(PublishedReference {
        accuracy_pct: acc,
        precision: p,
        recall: r,
    })
}

fn labelled<S: Scalar>(samples: &[PairedSample<S>], image: impl Fn(&PairedSample<S>) -> TactileImage<S>) -> Result<Vec<LabeledImage<S>>> {
    samples
        .iter()
        .map(|s| {
            let label = s
                .class()
                .ok_or_else(|| Error::Config(format!("sample {} has no braille label", s.object_id)))?;
            Ok(LabeledImage { image: image(s), label })
        })
        .collect()
}

/// Trains one classifier per training-image source with the same
/// architecture, seed and epoch budget and scores each on the oracle
/// images of `test`. `generated[i]` is the diffusion image for
/// `train.samples[i]`.
pub fn run_comparison<S: Scalar>(
    train: &Corpus<S>,
    test: &Corpus<S>,
    generated: &[TactileImage<S>],
    config: &HarnessConfig,
) -> Result<ComparisonReport> {
    if train.manifest.kind != CorpusKind::ClassifierTrain || test.manifest.kind != CorpusKind::ClassifierTest {
        return Err(Error::Config("comparison needs classifier_train and classifier_test corpora".into()));
    }
    if generated.len() != train.samples.len() {
        return Err(Error::Config(format!(
            "{} generated images for {} training samples",
            generated.len(),
            train.samples.len()
        )));
    }
    let classes = config.classifier.arch.classes;
    let test_set = labelled(&test.samples, |s| s.target.clone())?;
    let test_images: Vec<TactileImage<S>> = test_set.iter().map(|d| d.image.clone()).collect();
    let test_labels: Vec<usize> = test_set.iter().map(|d| d.label).collect();
    let score = |p: &ClassifierParams<S>| -> Result<ClassifierMetrics> {
        classifier_metrics(&p.predict_batch(&test_images)?, &test_labels, classes)
    };
    let cfg = &config.classifier;
    let mut warnings = Vec::new();
    let mut rows = Vec::new();

    let sim = labelled(&train.samples, |s| sim_image(&s.depth))?;
    let (sim_clf, log) = train_classifier(&sim, cfg, None, false)?;
    warnings.extend(log.warnings);
    rows.push(ComparisonRow {
        source: SOURCE_SIM.into(),
        finetune_pct: None,
        train_images: sim.len(),
        metrics: score(&sim_clf)?,
        published: published(30.23, 0.34, 0.30),
    });

    let (aug_clf, _) = train_classifier(&sim, cfg, None, true)?;
    rows.push(ComparisonRow {
        source: SOURCE_SIM_AUG.into(),
        finetune_pct: None,
        train_images: sim.len(),
        metrics: score(&aug_clf)?,
        published: published(43.48, 0.61, 0.43),
    });

    let real = labelled(&train.samples, |s| s.target.clone())?;
    let keep = subset_indices(real.len(), config.finetune_fraction, derive_seed(cfg.seed, "harness/finetune"))?;
    let subset: Vec<LabeledImage<S>> = keep.iter().map(|&i| real[i].clone()).collect();
    let pct = config.finetune_fraction * 100.0;
    if subset.is_empty() {
        warnings.push(format!("fine-tune fraction {pct}% selects no images; row skipped"));
    } else {
        let (ft_clf, _) = train_classifier(&subset, cfg, Some(sim_clf), false)?;
        rows.push(ComparisonRow {
            source: SOURCE_SIM_FINETUNE.into(),
            finetune_pct: Some(pct),
            train_images: sim.len() + subset.len(),
            metrics: score(&ft_clf)?,
            published: if (pct - 20.0).abs() < 1e-9 { published(64.99, 0.71, 0.65) } else { None },
        });
    }

    let diff: Vec<LabeledImage<S>> = real
        .iter()
        .zip(generated)
        .map(|(r, g)| LabeledImage {
            image: g.clone(),
            label: r.label,
        })
        .collect();
    let (diff_clf, _) = train_classifier(&diff, cfg, None, false)?;
    rows.push(ComparisonRow {
        source: SOURCE_DIFFUSION.into(),
        finetune_pct: None,
        train_images: diff.len(),
        metrics: score(&diff_clf)?,
        published: published(75.74, 0.79, 0.76),
    });

    let (real_clf, _) = train_classifier(&real, cfg, None, false)?;
    rows.push(ComparisonRow {
        source: SOURCE_REAL.into(),
        finetune_pct: None,
        train_images: real.len(),
        metrics: score(&real_clf)?,
        published: published(100.0, 1.0, 1.0),
    });

    Ok(ComparisonReport {
        averaging: "macro".into(),
        test_images: test_images.len(),
        rows,
        warnings,
    })
}

/// Writes one `depth | target | generated | |difference|` strip per
/// sample, each carrying its SSIM (generated vs target) in a tEXt chunk.
pub fn emit_panels<S: Scalar>(samples: &[PairedSample<S>], generated: &[TactileImage<S>], dir: &Path) -> Result<Vec<PathBuf>> {
    if samples.len() != generated.len() {
        return Err(Error::Argument(format!(
            "{} samples but {} generated images",
            samples.len(),
            generated.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    samples
        .par_iter()
        .zip(generated.par_iter())
        .enumerate()
        .map(|(i, (s, g))| {
            let (h, w) = (s.target.height(), s.target.width());
            let sim = sim_image(&s.depth);
            let diff = s.target.zip_map(g, |a, b| (a - b).abs())?;
            let tiles = [&sim, &s.target, g, &diff];
            let panel = Image::from_fn(3, h, 4 * w, |c, y, x| tiles[x / w].at(c, y, x % w));
            let score = ssim(g, &s.target)?;
            let path = dir.join(format!("panel_{i:06}.png"));
            write_rgb_png(&path, &panel, &[("ssim", format!("{score}")), ("object", s.object_id.clone())])?;
            Ok(path)
        })
        .collect()
}
