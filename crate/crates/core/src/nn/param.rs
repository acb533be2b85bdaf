use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// How a parameter tensor is filled at initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Normal(f64),
}

/// A named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub init: Init,
}

/// Allocator that lays out every tensor of a model in one flat buffer.
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, len: usize, init: Init) -> usize {
        let offset = self.total;
        self.entries.push(ParamEntry {
            name: name.into(),
            offset,
            len,
            init,
        });
        self.total += len;
        offset
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Fill a fresh parameter vector, visiting tensors in allocation order.
    pub fn initialize<S: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        let mut out = Vec::with_capacity(self.total);
        for e in &self.entries {
            for _ in 0..e.len {
                let v = match e.init {
                    Init::Zeros => 0.0,
                    Init::Ones => 1.0,
                    Init::Uniform(b) => rng.random_range(-b..=b),
                    Init::Normal(sd) => sd * rng.sample::<f64, _>(StandardNormal),
                };
                out.push(S::of(v));
            }
        }
        out
    }
}
