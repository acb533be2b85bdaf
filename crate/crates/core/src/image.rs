//! Dense `C x H x W` arrays used for every image-like quantity.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A channel-major `C x H x W` array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image<S> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<S>,
}

/// Diffusion state (`y_0`, `y_t`, samples) in normalized `[-1, 1]` space.
pub type LatentImage<S> = Image<S>;
/// Independent standard-normal draws shaped like a [`LatentImage`].
pub type NoiseField<S> = Image<S>;
/// Three-channel sensor image with intensities in `[0, 1]`.
pub type TactileImage<S> = Image<S>;

pub type Shape = (usize, usize, usize);

impl<S: Scalar> Image<S> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, S::zero())
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: S) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Argument(format!(
                "buffer of {} values cannot hold {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> S,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image {
            channels,
            height,
            width,
            data,
        }
    }

    /// Standard-normal draws in channel-major order.
    pub fn standard_normal<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let (c, h, w) = shape;
        let data = (0..c * h * w)
            .map(|_| S::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Image {
            channels: c,
            height: h,
            width: w,
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[S] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [S] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> S {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: S) {
        let idx = (c * self.height + y) * self.width + x;
        self.data[idx] = v;
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: self.shape(),
            });
        }
        Ok(())
    }

    pub fn ensure_same_shape(&self, other: &Image<S>) -> Result<()> {
        other.ensure_shape(self.shape())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination; shapes must match.
    pub fn zip_map(&self, other: &Image<S>, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `a * self + b * other`, element-wise.
    pub fn lincomb(&self, a: S, other: &Image<S>, b: S) -> Result<Self> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|v| v * s)
    }

    pub fn clamp(&self, lo: S, hi: S) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Image<S>) -> Result<S> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v.f64()).sum::<f64>() / self.data.len() as f64
    }

    pub fn cast<T: Scalar>(&self) -> Image<T> {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| T::of(v.f64())).collect(),
        }
    }

    /// Stack along the channel axis: `[self ; other]`.
    pub fn concat_channels(&self, other: &Image<S>) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Argument(format!(
                "cannot concatenate {}x{} with {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Image {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// Split off the first `channels` channels; inverse of [`Image::concat_channels`].
    pub fn split_channels(&self, channels: usize) -> (Self, Self) {
        assert!(channels <= self.channels);
        let cut = channels * self.plane_len();
        (
            Image {
                channels,
                height: self.height,
                width: self.width,
                data: self.data[..cut].to_vec(),
            },
            Image {
                channels: self.channels - channels,
                height: self.height,
                width: self.width,
                data: self.data[cut..].to_vec(),
            },
        )
    }
}

/// Contact depth in millimetres, one value per pixel (`0` means no contact).
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<S> {
    mm: Image<S>,
    max_penetration_mm: f64,
}

impl<S: Scalar> DepthMap<S> {
    pub fn new(mm: Image<S>, max_penetration_mm: f64) -> Result<Self> {
        if mm.channels() != 1 {
            return Err(Error::Argument(format!(
                "depth map must have one channel, got {}",
                mm.channels()
            )));
        }
        if !(max_penetration_mm > 0.0 && max_penetration_mm.is_finite()) {
            return Err(Error::Config(format!(
                "max penetration must be positive, got {max_penetration_mm}"
            )));
        }
        let limit = S::of(max_penetration_mm);
        if mm.data().iter().any(|&v| !v.is_finite() || v < S::zero() || v > limit) {
            return Err(Error::Domain(format!(
                "depth values must lie in [0, {max_penetration_mm}] mm"
            )));
        }
        Ok(DepthMap {
            mm,
            max_penetration_mm,
        })
    }

    pub fn zeros(height: usize, width: usize, max_penetration_mm: f64) -> Self {
        DepthMap {
            mm: Image::zeros(1, height, width),
            max_penetration_mm,
        }
    }

    /// Build from values already normalized to `[0, 1]` of the maximum penetration.
    pub fn from_normalized(normalized: &Image<S>, max_penetration_mm: f64) -> Result<Self> {
        let scale = S::of(max_penetration_mm);
        Self::new(
            normalized.map(|v| (v.max(S::zero()).min(S::one())) * scale),
            max_penetration_mm,
        )
    }

    pub fn mm(&self) -> &Image<S> {
        &self.mm
    }

    pub fn height(&self) -> usize {
        self.mm.height()
    }

    pub fn width(&self) -> usize {
        self.mm.width()
    }

    pub fn max_penetration_mm(&self) -> f64 {
        self.max_penetration_mm
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> S {
        self.mm.at(0, y, x)
    }

    /// Network-facing view: depth divided by the maximum penetration, in `[0, 1]`.
    pub fn normalized(&self) -> Image<S> {
        let inv = S::of(1.0 / self.max_penetration_mm);
        self.mm.map(|v| v * inv)
    }

    pub fn cast<T: Scalar>(&self) -> DepthMap<T> {
        DepthMap {
            mm: self.mm.cast(),
            max_penetration_mm: self.max_penetration_mm,
        }
    }
}
