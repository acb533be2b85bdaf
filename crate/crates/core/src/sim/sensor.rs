use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;

/// Directional light shining from `direction` (unit vector, camera side is +z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub direction: [f64; 3],
    pub color: [f64; 3],
}

impl Light {
    pub fn from_angles(azimuth_deg: f64, elevation_deg: f64, color: [f64; 3]) -> Self {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        Light {
            direction: [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()],
            color,
        }
    }
}

/// Procedural no-contact image: base colour, a linear tint ramp, radial
/// vignetting and faint low-frequency ripple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub base: [f64; 3],
    pub ramp: [f64; 3],
    pub vignette: f64,
    pub ripple: f64,
    pub seed: u64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec {
            base: [0.42, 0.46, 0.50],
            ramp: [0.06, -0.04, 0.03],
            vignette: 0.12,
            ripple: 0.02,
            seed: 7,
        }
    }
}

impl BackgroundSpec {
    pub fn render(&self, height: usize, width: usize) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut waves = [[0.0f64; 3]; 3];
        for w in waves.iter_mut() {
            *w = [
                rng.random_range(1.0..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::PI),
            ];
        }
        Image::from_fn(3, height, width, |c, y, x| {
            let u = (x as f64 + 0.5) / width as f64 - 0.5;
            let v = (y as f64 + 0.5) / height as f64 - 0.5;
            let [freq, phase, angle] = waves[c];
            let along = u * angle.cos() + v * angle.sin();
            let value = self.base[c] + self.ramp[c] * (u + v)
                - self.vignette * (u * u + v * v)
                + self.ripple * (std::f64::consts::TAU * freq * along + phase).sin();
            value.clamp(0.0, 1.0)
        })
    }
}

/// Serializable description of a sensor; the background is regenerated from
/// [`BackgroundSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub gel_size_mm: (f64, f64),
    pub resolution: (usize, usize),
    pub max_penetration_mm: f64,
    pub lights: [Light; 3],
    pub ambient: [f64; 3],
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
    pub background: BackgroundSpec,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig::desk((64, 64))
    }
}

impl SensorConfig {
    /// 20x20 mm gel with red, green and blue lights 120 deg apart at 30 deg
    /// elevation.
    pub fn desk(resolution: (usize, usize)) -> Self {
        SensorConfig {
            gel_size_mm: (20.0, 20.0),
            resolution,
            max_penetration_mm: 1.5,
            lights: [
                Light::from_angles(90.0, 30.0, [1.0, 0.0, 0.0]),
                Light::from_angles(210.0, 30.0, [0.0, 1.0, 0.0]),
                Light::from_angles(330.0, 30.0, [0.0, 0.0, 1.0]),
            ],
            ambient: [0.1, 0.1, 0.1],
            diffuse: 0.6,
            specular: 0.08,
            shininess: 12.0,
            background: BackgroundSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.resolution;
        if h == 0 || w == 0 {
            return Err(Error::Config("sensor resolution must be positive".into()));
        }
        let (gw, gh) = self.gel_size_mm;
        if !(gw > 0.0 && gh > 0.0 && gw.is_finite() && gh.is_finite()) {
            return Err(Error::Config("gel size must be positive".into()));
        }
        if !(self.max_penetration_mm > 0.0 && self.max_penetration_mm.is_finite()) {
            return Err(Error::Config("max penetration must be positive".into()));
        }
        for (i, l) in self.lights.iter().enumerate() {
            let norm = l.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("light {i} direction has norm {norm}")));
            }
        }
        if self.shininess <= 0.0 || self.diffuse < 0.0 || self.specular < 0.0 {
            return Err(Error::Config("shading coefficients must be non-negative".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("sensor config serializes");
        format!("{:x}", Sha256::digest(json))
    }
}

/// A configured sensor plus its flat-gel reference image.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSpec {
    pub config: SensorConfig,
    pub background: Image<f64>,
}

impl SensorSpec {
    pub fn new(config: SensorConfig) -> Result<Self> {
        config.validate()?;
        let (h, w) = config.resolution;
        let background = config.background.render(h, w);
        Ok(SensorSpec { config, background })
    }

    pub fn desk() -> Self {
        Self::new(SensorConfig::default()).expect("desk sensor is valid")
    }

    /// Same optics, different flat-gel image.
    pub fn with_background(mut self, background: Image<f64>) -> Result<Self> {
        let (h, w) = self.config.resolution;
        background.ensure_shape((3, h, w))?;
        self.background = background;
        Ok(self)
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.config.resolution
    }

    pub fn gel_size_mm(&self) -> (f64, f64) {
        self.config.gel_size_mm
    }

    pub fn max_penetration_mm(&self) -> f64 {
        self.config.max_penetration_mm
    }

    /// Millimetres per pixel along x (columns) and y (rows).
    pub fn pixel_pitch_mm(&self) -> (f64, f64) {
        let (h, w) = self.config.resolution;
        let (gw, gh) = self.config.gel_size_mm;
        (gw / w as f64, gh / h as f64)
    }

    /// Gel-frame coordinates of a pixel centre; x to the right, y up.
    pub fn pixel_center_mm(&self, row: usize, col: usize) -> (f64, f64) {
        let (h, w) = self.config.resolution;
        let (px, py) = self.pixel_pitch_mm();
        (
            (col as f64 + 0.5 - w as f64 / 2.0) * px,
            (h as f64 / 2.0 - row as f64 - 0.5) * py,
        )
    }

    /// Config hash extended with the background pixels, so a swapped
    /// background is detected.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config.hash().as_bytes());
        for v in self.background.data() {
            h.update(v.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}
