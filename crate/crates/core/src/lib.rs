pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision for training and inference.
pub type Real = f32;
/// Precision for gradient checks and oracle comparisons.
pub type RealF64 = f64;

pub type Image32 = image::Image<Real>;
pub type DepthMap32 = image::DepthMap<Real>;
pub type Denoiser32 = model::DenoiserParams<Real>;
pub type Denoiser64 = model::DenoiserParams<RealF64>;
