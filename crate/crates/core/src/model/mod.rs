//! Conditional U-Net noise predictor `f(x, y_t, t)`.
//!
//! The depth map `x` (normalized to `[0, 1]`) is concatenated with the noisy
//! state `y_t` along the channel axis, giving a 4-channel network input. The
//! noise level enters as a sinusoidal embedding of the integer timestep `t`,
//! passed through a two-layer MLP and added as a per-channel shift inside
//! every residual block. Swapping in an `alpha_bar_t`-based encoding only
//! requires changing [`timestep_embedding`]'s argument.

mod checkpoint;
mod unet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{ancestral_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, LatentImage, NoiseField};
use crate::scalar::Scalar;

pub use checkpoint::{Checkpoint, TrainState, CHECKPOINT_VERSION};
pub use unet::{timestep_embedding, UNet, UNetCache};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// `(height, width)` of the images fed to the network.
    pub image_size: (usize, usize),
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub blocks_per_stage: usize,
    pub noise_embed_dim: usize,
    pub norm_groups: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            image_size: (64, 64),
            base_channels: 16,
            channel_multipliers: vec![1, 2],
            blocks_per_stage: 2,
            noise_embed_dim: 32,
            norm_groups: 4,
        }
    }
}

impl DenoiserConfig {
    pub const COND_CHANNELS: usize = 1;
    pub const OUT_CHANNELS: usize = 3;

    pub fn stages(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.channel_multipliers.is_empty() || self.channel_multipliers.contains(&0) {
            return Err(Error::Config("channel multipliers must be a non-empty list of positive integers".into()));
        }
        if self.base_channels == 0 || self.blocks_per_stage == 0 {
            return Err(Error::Config("base channels and blocks per stage must be positive".into()));
        }
        if self.noise_embed_dim < 2 || !self.noise_embed_dim.is_multiple_of(2) {
            return Err(Error::Config("noise embedding dimension must be even and >= 2".into()));
        }
        let div = 1usize << (self.stages() - 1);
        if h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "image size {h}x{w} is not divisible by {div} ({} stages)",
                self.stages()
            )));
        }
        let g = self.norm_groups;
        let ch: Vec<usize> = self.channel_multipliers.iter().map(|m| m * self.base_channels).collect();
        let mut widths = vec![self.base_channels];
        widths.extend(&ch);
        for s in 0..ch.len() {
            let deeper = if s + 1 < ch.len() { ch[s + 1] } else { ch[s] };
            widths.push(deeper + ch[s]);
            widths.push(2 * ch[s]);
        }
        if g == 0 || widths.iter().any(|c| c % g != 0) {
            return Err(Error::Config(format!(
                "norm groups {g} must divide every channel width {widths:?}"
            )));
        }
        Ok(())
    }
}

/// Network weights plus the architecture they belong to.
#[derive(Clone, Debug)]
pub struct DenoiserParams<S> {
    net: UNet,
    values: Vec<S>,
}

/// Deterministic initialization; the output projection starts at zero.
pub fn init_denoiser<S: Scalar>(config: &DenoiserConfig, seed: u64) -> Result<DenoiserParams<S>> {
    config.validate()?;
    let net = UNet::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = net.layout().initialize(&mut rng);
    Ok(DenoiserParams { net, values })
}

impl<S: Scalar> DenoiserParams<S> {
    pub fn from_values(config: &DenoiserConfig, values: Vec<S>) -> Result<Self> {
        config.validate()?;
        let net = UNet::new(config);
        if values.len() != net.param_count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for this configuration, found {}",
                net.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelHealth("non-finite parameter value".into()));
        }
        Ok(DenoiserParams { net, values })
    }

    pub fn config(&self) -> &DenoiserConfig {
        self.net.config()
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over the little-endian f64 encoding of every parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.f64().to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    pub fn cast<T: Scalar>(&self) -> DenoiserParams<T> {
        DenoiserParams {
            net: self.net.clone(),
            values: self.values.iter().map(|v| T::of(v.f64())).collect(),
        }
    }

    fn check_inputs(&self, cond: &Image<S>, y_t: &Image<S>) -> Result<()> {
        let (h, w) = self.config().image_size;
        if cond.shape() != (DenoiserConfig::COND_CHANNELS, h, w) {
            return Err(Error::Argument(format!(
                "conditioning image is {:?}, network expects 1x{h}x{w}",
                cond.shape()
            )));
        }
        if y_t.shape() != (DenoiserConfig::OUT_CHANNELS, h, w) {
            return Err(Error::Argument(format!(
                "noisy state is {:?}, network expects 3x{h}x{w}",
                y_t.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping activations for [`DenoiserParams::backward`].
    /// `cond` is the normalized depth image.
    pub fn forward_train(&self, cond: &Image<S>, y_t: &Image<S>, t: usize) -> Result<(Image<S>, UNetCache<S>)> {
        self.check_inputs(cond, y_t)?;
        Ok(self.net.forward(&self.values, cond, y_t, t))
    }

    pub fn backward(&self, cache: &UNetCache<S>, dout: &Image<S>, grads: &mut [S]) {
        self.net.backward(&self.values, cache, dout, grads)
    }

    /// Raw network evaluation on a normalized conditioning image.
    pub fn predict_normalized(&self, cond: &Image<S>, y_t: &LatentImage<S>, t: usize) -> Result<NoiseField<S>> {
        self.check_inputs(cond, y_t)?;
        let (out, _) = self.net.forward(&self.values, cond, y_t, t);
        if !out.all_finite() {
            return Err(Error::ModelHealth(format!("non-finite noise estimate at t={t}")));
        }
        Ok(out)
    }

    /// Draw one foreground sample for `cond` with the full reverse chain.
    pub fn sample(&self, cond: &DepthMap<S>, schedule: &NoiseSchedule, seed: u64) -> Result<LatentImage<S>> {
        let predictor = |x: &DepthMap<S>, y: &LatentImage<S>, t: usize| predict_noise(self, x, y, t, schedule);
        ancestral_sample(&predictor, cond, DenoiserConfig::OUT_CHANNELS, schedule, seed)
    }

    /// Samples for many conditions, in parallel; item `i` uses `seeds[i]`.
    pub fn sample_many(&self, conds: &[DepthMap<S>], schedule: &NoiseSchedule, seeds: &[u64]) -> Result<Vec<LatentImage<S>>> {
        if conds.len() != seeds.len() {
            return Err(Error::Argument("one seed per condition is required".into()));
        }
        conds
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(c, &s)| self.sample(c, schedule, s))
            .collect()
    }
}

/// Noise estimate `f(x, y_t, t)` for a depth map in millimetres.
pub fn predict_noise<S: Scalar>(
    params: &DenoiserParams<S>,
    x: &DepthMap<S>,
    y_t: &LatentImage<S>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<NoiseField<S>> {
    schedule.check_t(t)?;
    if (x.height(), x.width()) != (y_t.height(), y_t.width()) {
        return Err(Error::Argument(format!(
            "depth map is {}x{} but noisy state is {}x{}",
            x.height(),
            x.width(),
            y_t.height(),
            y_t.width()
        )));
    }
    params.predict_normalized(&x.normalized(), y_t, t)
}

/// Per-item predictions; each output depends only on its own inputs.
pub fn predict_noise_batch<S: Scalar>(
    params: &DenoiserParams<S>,
    items: &[(DepthMap<S>, LatentImage<S>, usize)],
    schedule: &NoiseSchedule,
) -> Result<Vec<NoiseField<S>>> {
    items
        .par_iter()
        .map(|(x, y, t)| predict_noise(params, x, y, *t, schedule))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_linear_schedule;
    use rand::Rng;

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            image_size: (8, 8),
            base_channels: 2,
            channel_multipliers: vec![1, 1],
            blocks_per_stage: 1,
            noise_embed_dim: 2,
            norm_groups: 1,
        }
    }

    fn small() -> DenoiserConfig {
        DenoiserConfig {
            image_size: (32, 32),
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            blocks_per_stage: 2,
            noise_embed_dim: 16,
            norm_groups: 4,
        }
    }

    fn random_state(h: usize, w: usize, seed: u64) -> (DepthMap<f32>, LatentImage<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = Image::from_fn(1, h, w, |_, _, _| rng.random_range(0.0..1.0f32));
        let y = Image::from_fn(3, h, w, |_, _, _| rng.random_range(-1.0..1.0f32));
        (DepthMap::new(depth, 1.0).unwrap(), y)
    }

    #[test]
    fn same_seed_same_checksum() {
        let a = init_denoiser::<f32>(&small(), 9).unwrap();
        let b = init_denoiser::<f32>(&small(), 9).unwrap();
        let c = init_denoiser::<f32>(&small(), 10).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn indivisible_image_size_is_a_config_error() {
        let mut cfg = small();
        cfg.image_size = (30, 32);
        cfg.channel_multipliers = vec![1, 2, 2];
        assert!(matches!(init_denoiser::<f32>(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = small();
        cfg.norm_groups = 3;
        assert!(matches!(init_denoiser::<f32>(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn full_resolution_fits_four_stages() {
        let cfg = DenoiserConfig {
            image_size: (240, 320),
            channel_multipliers: vec![1, 2, 2, 4],
            ..DenoiserConfig::default()
        };
        assert!(cfg.validate().is_ok());
        let five = DenoiserConfig {
            channel_multipliers: vec![1, 1, 1, 1, 1, 1],
            ..cfg
        };
        assert!(five.validate().is_err());
    }

    #[test]
    fn layout_size_matches_layer_tally() {
        for cfg in [tiny(), small(), DenoiserConfig::default()] {
            let p = init_denoiser::<f32>(&cfg, 0).unwrap();
            assert_eq!(p.param_count(), p.net().tally());
        }
    }

    #[test]
    fn forward_shape_and_finiteness() {
        let s = make_linear_schedule(50, 1e-3, 0.05).unwrap();
        let mut p = init_denoiser::<f32>(&small(), 1).unwrap();
        // perturb so the zero-initialized head does not hide the body
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for v in p.values_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let (x, y) = random_state(32, 32, 2);
        let out = predict_noise(&p, &x, &y, 17, &s).unwrap();
        assert_eq!(out.shape(), (3, 32, 32));
        assert!(out.all_finite());
        assert!(out.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn fresh_model_output_is_near_zero() {
        let s = make_linear_schedule(50, 1e-3, 0.05).unwrap();
        let p = init_denoiser::<f32>(&small(), 1).unwrap();
        let x = DepthMap::zeros(32, 32, 1.0);
        let y = Image::zeros(3, 32, 32);
        let out = predict_noise(&p, &x, &y, 50, &s).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn mismatched_spatial_sizes_are_rejected() {
        let s = make_linear_schedule(50, 1e-3, 0.05).unwrap();
        let p = init_denoiser::<f32>(&small(), 1).unwrap();
        let x = DepthMap::zeros(16, 32, 1.0);
        let y = Image::zeros(3, 32, 32);
        assert!(matches!(predict_noise(&p, &x, &y, 3, &s), Err(Error::Argument(_))));
        let x = DepthMap::zeros(32, 32, 1.0);
        assert!(matches!(predict_noise(&p, &x, &y, 51, &s), Err(Error::TimestepOutOfRange { .. })));
    }

    #[test]
    fn batch_prediction_matches_single_items() {
        let s = make_linear_schedule(50, 1e-3, 0.05).unwrap();
        let mut p = init_denoiser::<f32>(&small(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in p.values_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let (x1, y1) = random_state(32, 32, 6);
        let (x2, y2) = random_state(32, 32, 7);
        let batch = predict_noise_batch(&p, &[(x1.clone(), y1.clone(), 5), (x2.clone(), y2.clone(), 40)], &s).unwrap();
        let a = predict_noise(&p, &x1, &y1, 5, &s).unwrap();
        let b = predict_noise(&p, &x2, &y2, 40, &s).unwrap();
        assert!(batch[0].max_abs_diff(&a).unwrap() < 1e-5);
        assert!(batch[1].max_abs_diff(&b).unwrap() < 1e-5);
    }

    #[test]
    fn timestep_embedding_layout() {
        let e = timestep_embedding::<f64>(3, 4);
        assert!((e[0] - 3f64.sin()).abs() < 1e-15);
        assert!((e[2] - 3f64.cos()).abs() < 1e-15);
        assert!((e[1] - (3.0 * 0.01f64).sin()).abs() < 1e-12);
    }
}
