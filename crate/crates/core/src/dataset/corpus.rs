use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::io::{quantize_image, read_depth_png, read_rgb_png, write_depth_png, write_rgb_png};
use crate::dataset::ops::{extract_foreground, split_indices};
use crate::error::{Error, Result};
use crate::image::{DepthMap, LatentImage, TactileImage};
use crate::rng::{derive_seed, rng_for};
use crate::scalar::Scalar;
use crate::sim::{
    braille_label, braille_pattern, oracle_render, pose_grid, render_depth, AxisRange, BrailleGeometry,
    ContactPose, IndenterShape, PoseGridSpec, SensorConfig, SensorSpec,
};

pub const MANIFEST_FILE: &str = "manifest";
pub const BACKGROUND_FILE: &str = "background.png";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Pretrain,
    Finetune,
    ClassifierTrain,
    ClassifierTest,
}

impl CorpusKind {
    pub const ALL: [CorpusKind; 4] = [
        CorpusKind::Pretrain,
        CorpusKind::Finetune,
        CorpusKind::ClassifierTrain,
        CorpusKind::ClassifierTest,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorpusKind::Pretrain => "pretrain",
            CorpusKind::Finetune => "finetune",
            CorpusKind::ClassifierTrain => "classifier_train",
            CorpusKind::ClassifierTest => "classifier_test",
        }
    }

    pub fn is_labelled(&self) -> bool {
        !matches!(self, CorpusKind::Pretrain)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Primitive indenters at random poses, standing in for a large generic
/// contact dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    pub sphere_radii_mm: Vec<f64>,
    pub edge_widths_mm: Vec<f64>,
    pub poses_per_shape: usize,
    pub max_offset_mm: f64,
    pub penetration_mm: (f64, f64),
    pub train_fraction: f64,
}

impl Default for PretrainSpec {
    fn default() -> Self {
        PretrainSpec {
            sphere_radii_mm: vec![1.5, 2.5, 3.5, 5.0, 7.0],
            edge_widths_mm: vec![1.0, 2.0, 3.0, 4.5, 6.0],
            poses_per_shape: 100,
            max_offset_mm: 6.0,
            penetration_mm: (0.2, 1.2),
            train_fraction: 0.8,
        }
    }
}

/// Braille cells pressed on a pose grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrailleSpec {
    pub characters: String,
    pub geometry: BrailleGeometry,
    pub grid: PoseGridSpec,
    /// Keep a seeded subset of each character's grid; `None` keeps all.
    pub per_character: Option<usize>,
    pub train_fraction: f64,
}

impl Default for BrailleSpec {
    fn default() -> Self {
        BrailleSpec {
            characters: all_characters(),
            geometry: BrailleGeometry::default(),
            grid: PoseGridSpec::finetune(-0.4, -0.2),
            per_character: Some(40),
            train_fraction: 0.8,
        }
    }
}

/// Reading-posture grid shared by the classifier corpora. Train and test
/// draw disjoint poses from each character's shuffled grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub characters: String,
    pub geometry: BrailleGeometry,
    pub grid: PoseGridSpec,
    pub train_per_character: usize,
    pub test_per_character: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            characters: all_characters(),
            geometry: BrailleGeometry::default(),
            grid: PoseGridSpec {
                x_mm: AxisRange::centered(1.5, 3),
                y_mm: AxisRange::centered(1.5, 3),
                z_mm: AxisRange {
                    start: -0.7,
                    step: -0.3,
                    count: 2,
                },
                yaw_deg: AxisRange::centered(10.0, 5),
            },
            train_per_character: 12,
            test_per_character: 8,
        }
    }
}

fn all_characters() -> String {
    crate::sim::BRAILLE_CHARSET.iter().collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub pretrain: PretrainSpec,
    pub finetune: BrailleSpec,
    pub classifier: ClassifierSpec,
}

impl GenerationConfig {
    /// Full fine-tuning grid (3x3 offsets, 4 presses, 5 yaws) for every
    /// character, without subsetting.
    pub fn full_pose_grid() -> Self {
        let mut g = GenerationConfig::default();
        g.finetune.per_character = None;
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub depth: String,
    pub target: String,
    pub object_id: String,
    pub label: Option<char>,
    pub shape: IndenterShape,
    pub pose: ContactPose,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub kind: CorpusKind,
    pub seed: u64,
    pub sensor_hash: String,
    pub sensor: SensorConfig,
    pub background: String,
    pub samples: Vec<SampleRecord>,
    /// SHA-256 over the background and every listed image file.
    pub content_hash: String,
}

impl CorpusManifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }

    /// Hash of the serialized manifest (and therefore of the corpus content).
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_bytes()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: CorpusManifest = serde_json::from_slice(&bytes).map_err(|e| Error::io(&path, e))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::io(&path, format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn files(&self) -> Vec<&str> {
        let mut out = vec![self.background.as_str()];
        for s in &self.samples {
            out.push(&s.depth);
            out.push(&s.target);
        }
        out
    }

    /// Recomputes the content hash from disk.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let actual = content_hash(dir, &self.files())?;
        if actual != self.content_hash {
            return Err(Error::io(
                dir.join(MANIFEST_FILE),
                "corpus files do not match the manifest content hash",
            ));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }
}

fn content_hash(dir: &Path, files: &[&str]) -> Result<String> {
    let mut h = Sha256::new();
    for rel in files {
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(rel.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// What to render for one sample, before any file exists.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedSample {
    pub object_id: String,
    pub label: Option<char>,
    pub shape: IndenterShape,
    pub pose: ContactPose,
    pub split: Split,
}

fn braille_shapes(characters: &str, geometry: BrailleGeometry) -> Result<Vec<(char, IndenterShape)>> {
    if characters.is_empty() {
        return Err(Error::Config("braille corpus needs at least one character".into()));
    }
    characters
        .chars()
        .map(|c| {
            braille_label(c)?;
            Ok((
                c,
                IndenterShape::BrailleCell {
                    mask: braille_pattern(c)?,
                    geometry,
                },
            ))
        })
        .collect()
}

fn choose(n: usize, k: Option<usize>, seed: u64, tag: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(k) = k.filter(|&k| k < n) {
        idx.shuffle(&mut rng_for(seed, tag));
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

fn assign_splits(plan: &mut [PlannedSample], fraction: f64, seed: u64) -> Result<()> {
    let (_, test) = split_indices(plan.len(), fraction, derive_seed(seed, "split"))?;
    for i in test {
        plan[i].split = Split::Test;
    }
    Ok(())
}

/// Deterministic list of samples for a corpus kind.
pub fn plan_corpus(kind: CorpusKind, sensor: &SensorSpec, gen: &GenerationConfig, seed: u64) -> Result<Vec<PlannedSample>> {
    let mut plan = Vec::new();
    match kind {
        CorpusKind::Pretrain => {
            let p = &gen.pretrain;
            let (lo, hi) = p.penetration_mm;
            if p.poses_per_shape == 0 || !(lo > 0.0 && hi >= lo) || !(p.max_offset_mm >= 0.0) {
                return Err(Error::Config(format!("invalid pretrain spec {p:?}")));
            }
            let mut shapes: Vec<(String, IndenterShape)> = Vec::new();
            for &r in &p.sphere_radii_mm {
                shapes.push((format!("sphere-r{r:.2}"), IndenterShape::Sphere { radius_mm: r }));
            }
            for &w in &p.edge_widths_mm {
                shapes.push((
                    format!("edge-w{w:.2}"),
                    IndenterShape::Edge {
                        width_mm: w,
                        angle_deg: 0.0,
                    },
                ));
            }
            if shapes.is_empty() {
                return Err(Error::Config("pretrain corpus lists no shapes".into()));
            }
            let (gw, gh) = sensor.gel_size_mm();
            let reach_x = p.max_offset_mm.min(gw / 2.0);
            let reach_y = p.max_offset_mm.min(gh / 2.0);
            for (object_id, shape) in shapes {
                shape.validate()?;
                let mut rng = rng_for(seed, &format!("pretrain/{object_id}"));
                for _ in 0..p.poses_per_shape {
                    let pose = ContactPose {
                        dx_mm: rng.random_range(-reach_x..=reach_x),
                        dy_mm: rng.random_range(-reach_y..=reach_y),
                        dz_mm: -rng.random_range(lo..=hi),
                        yaw_deg: rng.random_range(-180.0..180.0),
                    };
                    plan.push(PlannedSample {
                        object_id: object_id.clone(),
                        label: None,
                        shape,
                        pose,
                        split: Split::Train,
                    });
                }
            }
            assign_splits(&mut plan, p.train_fraction, seed)?;
        }
        CorpusKind::Finetune => {
            let b = &gen.finetune;
            let poses = pose_grid(&b.grid)?;
            for (c, shape) in braille_shapes(&b.characters, b.geometry)? {
                for i in choose(poses.len(), b.per_character, seed, &format!("finetune/{c}")) {
                    plan.push(PlannedSample {
                        object_id: format!("braille-{c}"),
                        label: Some(c),
                        shape,
                        pose: poses[i],
                        split: Split::Train,
                    });
                }
            }
            assign_splits(&mut plan, b.train_fraction, seed)?;
        }
        CorpusKind::ClassifierTrain | CorpusKind::ClassifierTest => {
            let cs = &gen.classifier;
            let poses = pose_grid(&cs.grid)?;
            let need = cs.train_per_character + cs.test_per_character;
            if cs.train_per_character == 0 || cs.test_per_character == 0 || need > poses.len() {
                return Err(Error::Config(format!(
                    "classifier grid has {} poses per character, cannot take {} + {}",
                    poses.len(),
                    cs.train_per_character,
                    cs.test_per_character
                )));
            }
            let (split, range) = if kind == CorpusKind::ClassifierTrain {
                (Split::Train, 0..cs.train_per_character)
            } else {
                (Split::Test, cs.train_per_character..need)
            };
            for (c, shape) in braille_shapes(&cs.characters, cs.geometry)? {
                let mut idx: Vec<usize> = (0..poses.len()).collect();
                idx.shuffle(&mut rng_for(seed, &format!("classifier/{c}")));
                let mut mine = idx[range.clone()].to_vec();
                mine.sort_unstable();
                for i in mine {
                    plan.push(PlannedSample {
                        object_id: format!("braille-{c}"),
                        label: Some(c),
                        shape,
                        pose: poses[i],
                        split,
                    });
                }
            }
        }
    }
    for p in &plan {
        p.pose.validate(sensor.gel_size_mm())?;
    }
    Ok(plan)
}

/// Renders a planned sample without touching disk.
pub fn render_sample<S: Scalar>(p: &PlannedSample, sensor: &SensorSpec) -> Result<(DepthMap<S>, TactileImage<S>)> {
    let depth: DepthMap<f64> = render_depth(&p.shape, &p.pose, sensor)?;
    let target = oracle_render(&depth, sensor)?;
    Ok((depth.cast(), target.cast()))
}

/// Renders every sample of `kind`, writes images and then the manifest.
pub fn build_corpus(
    kind: CorpusKind,
    sensor: &SensorSpec,
    gen: &GenerationConfig,
    seed: u64,
    dir: &Path,
) -> Result<CorpusManifest> {
    let plan = plan_corpus(kind, sensor, gen, seed)?;
    for sub in ["depth", "target"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    write_rgb_png(&dir.join(BACKGROUND_FILE), &sensor.background, &[])?;
    let samples: Vec<SampleRecord> = plan
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let (depth, target) = render_sample::<f64>(p, sensor)?;
            let rec = SampleRecord {
                index,
                depth: format!("depth/{index:06}.png"),
                target: format!("target/{index:06}.png"),
                object_id: p.object_id.clone(),
                label: p.label,
                shape: p.shape,
                pose: p.pose,
                split: p.split,
            };
            write_depth_png(&dir.join(&rec.depth), &depth)?;
            write_rgb_png(&dir.join(&rec.target), &target, &[])?;
            Ok(rec)
        })
        .collect::<Result<_>>()?;
    let mut manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        kind,
        seed,
        sensor_hash: sensor.hash(),
        sensor: sensor.config.clone(),
        background: BACKGROUND_FILE.to_string(),
        samples,
        content_hash: String::new(),
    };
    manifest.content_hash = content_hash(dir, &manifest.files())?;
    let path = dir.join(MANIFEST_FILE);
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, manifest.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// One aligned (depth, target) pair with its metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample<S> {
    pub depth: DepthMap<S>,
    pub target: TactileImage<S>,
    pub background: Arc<TactileImage<S>>,
    pub label: Option<char>,
    pub pose: ContactPose,
    pub object_id: String,
    pub split: Split,
}

impl<S: Scalar> PairedSample<S> {
    pub fn foreground(&self) -> LatentImage<S> {
        extract_foreground(&self.target, &self.background).expect("corpus images share a shape")
    }

    /// Class index in the braille character set.
    pub fn class(&self) -> Option<usize> {
        self.label.and_then(|c| braille_label(c).ok())
    }
}

#[derive(Clone, Debug)]
pub struct Corpus<S> {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
    pub background: Arc<TactileImage<S>>,
    pub samples: Vec<PairedSample<S>>,
}

impl<S: Scalar> Corpus<S> {
    pub fn split(&self, split: Split) -> Vec<&PairedSample<S>> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }
}

/// Reads a corpus written by [`build_corpus`], checking its content hash.
pub fn load_corpus<S: Scalar>(dir: &Path) -> Result<Corpus<S>> {
    let manifest = CorpusManifest::load(dir)?;
    manifest.verify(dir)?;
    let background: Arc<TactileImage<S>> = Arc::new(read_rgb_png(&dir.join(&manifest.background))?);
    let max = manifest.sensor.max_penetration_mm;
    let samples = manifest
        .samples
        .par_iter()
        .map(|r| {
            if manifest.kind.is_labelled() && r.label.is_none() {
                return Err(Error::io(dir.join(MANIFEST_FILE), format!("sample {} has no label", r.index)));
            }
            let depth = read_depth_png(&dir.join(&r.depth), max)?;
            let target: TactileImage<S> = read_rgb_png(&dir.join(&r.target))?;
            if (depth.height(), depth.width()) != (target.height(), target.width()) {
                return Err(Error::io(dir.join(&r.target), "target does not align with depth"));
            }
            Ok(PairedSample {
                depth,
                target,
                background: background.clone(),
                label: r.label,
                pose: r.pose,
                object_id: r.object_id.clone(),
                split: r.split,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Corpus {
        dir: dir.to_path_buf(),
        manifest,
        background,
        samples,
    })
}

/// In-memory corpus with 8-bit quantized targets, matching what a
/// write/load round trip would produce.
pub fn render_corpus<S: Scalar>(
    kind: CorpusKind,
    sensor: &SensorSpec,
    gen: &GenerationConfig,
    seed: u64,
) -> Result<Vec<PairedSample<S>>> {
    let background: Arc<TactileImage<S>> = Arc::new(quantize_image(&sensor.background.cast()));
    plan_corpus(kind, sensor, gen, seed)?
        .par_iter()
        .map(|p| {
            let (depth, target) = render_sample::<S>(p, sensor)?;
            Ok(PairedSample {
                depth,
                target: quantize_image(&target),
                background: background.clone(),
                label: p.label,
                pose: p.pose,
                object_id: p.object_id.clone(),
                split: p.split,
            })
        })
        .collect()
}
