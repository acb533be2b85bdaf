//! Minimal layer library with hand-written backward passes.
//!
//! Layers do not own their weights. Each layer records offsets into one flat
//! parameter vector (see [`ParamLayout`]); `forward` reads from that vector
//! and `backward` accumulates into a gradient vector of the same length.
//! Activations are processed one image at a time.

mod act;
mod conv;
mod linear;
mod norm;
mod optim;
mod param;

pub use act::{
    avgpool2, avgpool2_backward, silu, silu_backward, silu_backward_vec, silu_grad_scalar,
    silu_scalar, silu_vec, upsample2, upsample2_backward,
};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::GroupNorm;
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use param::{Init, ParamEntry, ParamLayout};
