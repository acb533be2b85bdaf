use crate::nn::param::{Init, ParamLayout};
use crate::scalar::{matmul, Scalar};

/// Dense layer `y = W x + b` with `W` stored row-major as `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    weight: usize,
    bias: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, input: usize, output: usize, init: Init) -> Self {
        let weight = layout.alloc(format!("{name}.weight"), input * output, init);
        let bias = layout.alloc(format!("{name}.bias"), output, Init::Zeros);
        Linear {
            input,
            output,
            weight,
            bias,
        }
    }

    pub fn default_init(input: usize) -> Init {
        Init::Uniform(1.0 / (input as f64).sqrt())
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn forward<S: Scalar>(&self, p: &[S], x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.input);
        let mut y = p[self.bias..self.bias + self.output].to_vec();
        let w = &p[self.weight..self.weight + self.input * self.output];
        matmul(w, false, x, false, &mut y, self.output, self.input, 1, true);
        y
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx`.
    pub fn backward<S: Scalar>(&self, p: &[S], x: &[S], dy: &[S], g: &mut [S]) -> Vec<S> {
        assert_eq!(dy.len(), self.output);
        {
            let gw = &mut g[self.weight..self.weight + self.input * self.output];
            matmul(dy, false, x, false, gw, self.output, 1, self.input, true);
        }
        for (gb, &d) in g[self.bias..self.bias + self.output].iter_mut().zip(dy) {
            *gb += d;
        }
        let w = &p[self.weight..self.weight + self.input * self.output];
        let mut dx = vec![S::zero(); self.input];
        matmul(w, true, dy, false, &mut dx, self.input, self.output, 1, false);
        dx
    }
}
