use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::augment_lighting;
use crate::error::{Error, Result};
use crate::image::{Image, TactileImage};
use crate::nn::{avgpool2, avgpool2_backward, silu, silu_backward, Adam, AdamConfig, Conv2d, Linear, ParamLayout};
use crate::rng::{derive_seed, rng_for};
use crate::scalar::Scalar;
use crate::sim::BRAILLE_CHARSET;

const POOLED: usize = 4;

/// Conv stages of 3x3 conv, SiLU and 2x2 average pooling, pooled down to
/// 4x4 and read out by a linear layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub image_size: (usize, usize),
    pub channels: Vec<usize>,
    pub classes: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        ClassifierArch {
            image_size: (64, 64),
            channels: vec![8, 16, 32],
            classes: BRAILLE_CHARSET.len(),
        }
    }
}

impl ClassifierArch {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        let f = 1usize << self.channels.len();
        let ok_size = |n: usize| n.is_multiple_of(f) && (n / f) >= POOLED && ((n / f) / POOLED).is_power_of_two() && (n / f).is_multiple_of(POOLED);
        if self.channels.is_empty() || self.channels.contains(&0) || self.classes < 2 {
            return Err(Error::Config(format!("invalid classifier architecture {self:?}")));
        }
        if !(ok_size(h) && ok_size(w)) {
            return Err(Error::Config(format!(
                "image size {h}x{w} cannot be pooled to {POOLED}x{POOLED} by {} stages",
                self.channels.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Net {
    convs: Vec<Conv2d>,
    head: Linear,
    layout: ParamLayout,
}

impl Net {
    fn new(arch: &ClassifierArch) -> Self {
        let mut layout = ParamLayout::default();
        let mut convs = Vec::new();
        let mut cin = 3;
        for (i, &c) in arch.channels.iter().enumerate() {
            convs.push(Conv2d::same3(&mut layout, &format!("conv{i}"), cin, c));
            cin = c;
        }
        let feat = cin * POOLED * POOLED;
        let head = Linear::new(&mut layout, "head", feat, arch.classes, Linear::default_init(feat));
        Net { convs, head, layout }
    }
}

struct Cache<S> {
    inputs: Vec<Image<S>>,
    pre: Vec<Image<S>>,
    pooled_shapes: Vec<(usize, usize, usize)>,
    features: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct ClassifierParams<S> {
    arch: ClassifierArch,
    net: Net,
    values: Vec<S>,
}

pub fn init_classifier<S: Scalar>(arch: &ClassifierArch, seed: u64) -> Result<ClassifierParams<S>> {
    arch.validate()?;
    let net = Net::new(arch);
    let values = net.layout.initialize(&mut rng_for(seed, "classifier/init"));
    Ok(ClassifierParams {
        arch: arch.clone(),
        net,
        values,
    })
}

impl<S: Scalar> ClassifierParams<S> {
    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    fn check(&self, img: &TactileImage<S>) -> Result<()> {
        let (h, w) = self.arch.image_size;
        img.ensure_shape((3, h, w))
    }

    fn forward(&self, img: &TactileImage<S>) -> (Vec<S>, Cache<S>) {
        let p = &self.values;
        let two = S::of(2.0);
        let mut x = img.map(|v| v * two - S::one());
        let mut cache = Cache {
            inputs: Vec::new(),
            pre: Vec::new(),
            pooled_shapes: Vec::new(),
            features: Vec::new(),
        };
        for conv in &self.net.convs {
            let pre = conv.forward(p, &x);
            let act = silu(&pre);
            cache.inputs.push(x);
            cache.pooled_shapes.push(act.shape());
            x = avgpool2(&act);
            cache.pre.push(pre);
        }
        while x.height() > POOLED {
            cache.pooled_shapes.push(x.shape());
            x = avgpool2(&x);
        }
        cache.features = x.into_vec();
        (self.net.head.forward(p, &cache.features), cache)
    }

    fn backward(&self, cache: &Cache<S>, dlogits: &[S], g: &mut [S]) {
        let p = &self.values;
        let dfeat = self.net.head.backward(p, &cache.features, dlogits, g);
        let last = *self.arch.channels.last().expect("at least one stage");
        let mut dx = Image::from_vec(last, POOLED, POOLED, dfeat).expect("feature shape");
        let stages = self.net.convs.len();
        for shape in cache.pooled_shapes[stages..].iter().rev() {
            dx = avgpool2_backward(&dx, *shape);
        }
        for i in (0..stages).rev() {
            let dact = avgpool2_backward(&dx, cache.pooled_shapes[i]);
            let dpre = silu_backward(&cache.pre[i], &dact);
            match self.net.convs[i].backward(p, &cache.inputs[i], &dpre, g, i > 0) {
                Some(d) => dx = d,
                None => break,
            }
        }
    }

    pub fn logits(&self, img: &TactileImage<S>) -> Result<Vec<S>> {
        self.check(img)?;
        Ok(self.forward(img).0)
    }

    pub fn predict(&self, img: &TactileImage<S>) -> Result<usize> {
        let logits = self.logits(img)?;
        Ok(argmax(&logits))
    }

    pub fn predict_batch(&self, imgs: &[TactileImage<S>]) -> Result<Vec<usize>> {
        imgs.par_iter().map(|i| self.predict(i)).collect()
    }
}

fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy<S: Scalar>(logits: &[S], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.f64() - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (logits[label].f64() - m);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / z - if i == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub arch: ClassifierArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            arch: ClassifierArch::default(),
            epochs: 30,
            batch_size: 16,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierLog {
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Labelled training image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage<S> {
    pub image: TactileImage<S>,
    pub label: usize,
}

/// Cross-entropy training with Adam. When `augment` is set every image is
/// re-lit with [`augment_lighting`] each epoch. `init` continues from an
/// existing classifier (fine-tuning).
pub fn train_classifier<S: Scalar>(
    data: &[LabeledImage<S>],
    config: &ClassifierConfig,
    init: Option<ClassifierParams<S>>,
    augment: bool,
) -> Result<(ClassifierParams<S>, ClassifierLog)> {
    if data.is_empty() || config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config("classifier training needs data, epochs and a batch size".into()));
    }
    let mut params = match init {
        Some(p) if p.arch == config.arch => p,
        Some(_) => return Err(Error::Config("initial classifier has a different architecture".into())),
        None => init_classifier(&config.arch, config.seed)?,
    };
    let classes = config.arch.classes;
    let mut log = ClassifierLog::default();
    let mut present = vec![false; classes];
    for d in data {
        if d.label >= classes {
            return Err(Error::Argument(format!("label {} outside 0..{classes}", d.label)));
        }
        params.check(&d.image)?;
        present[d.label] = true;
    }
    let missing: Vec<usize> = (0..classes).filter(|&c| !present[c]).collect();
    if !missing.is_empty() {
        log.warnings.push(format!("training data has no examples of classes {missing:?}"));
    }
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        params.param_count(),
    );
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_for(config.seed, &format!("classifier/epoch/{epoch}")));
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let per: Vec<(f64, Vec<S>)> = chunk
                .par_iter()
                .map(|&i| {
                    let img = if augment {
                        augment_lighting(&data[i].image, derive_seed(config.seed, &format!("aug/{epoch}/{i}")))
                    } else {
                        data[i].image.clone()
                    };
                    let (logits, cache) = params.forward(&img);
                    let (loss, dl) = cross_entropy(&logits, data[i].label);
                    let dl: Vec<S> = dl.iter().map(|v| S::of(v * scale)).collect();
                    let mut g = vec![S::zero(); params.param_count()];
                    params.backward(&cache, &dl, &mut g);
                    (loss, g)
                })
                .collect();
            let mut grads = vec![S::zero(); params.param_count()];
            for (loss, g) in per {
                sum += loss;
                for (a, v) in grads.iter_mut().zip(g) {
                    *a += v;
                }
            }
            adam.update(&mut params.values, &grads);
        }
        let mean = sum / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingHealth(format!("classifier loss became {mean}")));
        }
        log.epoch_losses.push(mean);
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ClassifierArch {
        ClassifierArch {
            image_size: (16, 16),
            channels: vec![4, 8],
            classes: 5,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = init_classifier::<f64>(&arch(), 3).unwrap();
        let img = Image::from_fn(3, 16, 16, |c, y, x| ((c * 7 + y * 3 + x * 5) % 11) as f64 / 11.0);
        let loss = |q: &ClassifierParams<f64>| cross_entropy(&q.forward(&img).0, 2).0;
        let (logits, cache) = p.forward(&img);
        let (_, dl) = cross_entropy(&logits, 2);
        let mut g = vec![0.0; p.param_count()];
        p.backward(&cache, &dl, &mut g);
        for i in (0..p.param_count()).step_by(37) {
            let mut a = p.clone();
            let mut b = p.clone();
            a.values[i] += 1e-6;
            b.values[i] -= 1e-6;
            let fd = (loss(&a) - loss(&b)) / 2e-6;
            let tol = 1e-6 + 1e-4 * fd.abs().max(g[i].abs());
            assert!((fd - g[i]).abs() < tol, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn memorizes_one_image_per_class() {
        let data: Vec<LabeledImage<f32>> = (0..5)
            .map(|c| LabeledImage {
                image: Image::from_fn(3, 16, 16, |ch, y, x| (((ch + 1) * (c + 2) * (y * 16 + x)) % 17) as f32 / 17.0),
                label: c,
            })
            .collect();
        let cfg = ClassifierConfig {
            arch: arch(),
            epochs: 60,
            batch_size: 5,
            learning_rate: 1e-2,
            seed: 1,
        };
        let (p, log) = train_classifier(&data, &cfg, None, false).unwrap();
        let imgs: Vec<_> = data.iter().map(|d| d.image.clone()).collect();
        assert_eq!(p.predict_batch(&imgs).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(log.warnings.is_empty());
        assert!(log.epoch_losses.last().unwrap() < &log.epoch_losses[0]);
    }

    #[test]
    fn missing_class_is_a_warning() {
        let data = vec![LabeledImage {
            image: Image::<f32>::zeros(3, 16, 16),
            label: 1,
        }];
        let cfg = ClassifierConfig {
            arch: arch(),
            epochs: 1,
            ..ClassifierConfig::default()
        };
        let (_, log) = train_classifier(&data, &cfg, None, false).unwrap();
        assert_eq!(log.warnings.len(), 1);
    }

    #[test]
    fn bad_architecture() {
        let mut a = arch();
        a.image_size = (20, 16);
        assert!(matches!(init_classifier::<f32>(&a, 0), Err(Error::Config(_))));
    }
}
