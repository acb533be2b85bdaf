use crate::image::Image;
use crate::nn::param::{Init, ParamLayout};
use crate::scalar::Scalar;

/// Group normalization over `(channels / groups) x H x W` blocks of one image.
///
/// Statistics never span images, so outputs are independent of batch
/// composition.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
    gamma: usize,
    beta: usize,
}

impl GroupNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize, groups: usize) -> Self {
        assert!(groups > 0 && channels.is_multiple_of(groups), "groups must divide channels");
        let gamma = layout.alloc(format!("{name}.gamma"), channels, Init::Ones);
        let beta = layout.alloc(format!("{name}.beta"), channels, Init::Zeros);
        GroupNorm {
            channels,
            groups,
            eps: 1e-5,
            gamma,
            beta,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    /// Per-group `(mean, 1/std)`, accumulated in f64.
    fn stats<S: Scalar>(&self, x: &Image<S>) -> Vec<(f64, f64)> {
        let per = self.channels / self.groups;
        let chunk = per * x.plane_len();
        x.data()
            .chunks(chunk)
            .map(|block| {
                let n = block.len() as f64;
                let mean = block.iter().map(|v| v.f64()).sum::<f64>() / n;
                let var = block
                    .iter()
                    .map(|v| {
                        let d = v.f64() - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n;
                (mean, 1.0 / (var + self.eps).sqrt())
            })
            .collect()
    }

    pub fn forward<S: Scalar>(&self, p: &[S], x: &Image<S>) -> Image<S> {
        assert_eq!(x.channels(), self.channels, "group norm channels");
        let per = self.channels / self.groups;
        let stats = self.stats(x);
        let mut y = x.clone();
        for c in 0..self.channels {
            let (mean, rstd) = stats[c / per];
            let (mean, rstd) = (S::of(mean), S::of(rstd));
            let gm = p[self.gamma + c];
            let bt = p[self.beta + c];
            for v in y.plane_mut(c) {
                *v = (*v - mean) * rstd * gm + bt;
            }
        }
        y
    }

    pub fn backward<S: Scalar>(&self, p: &[S], x: &Image<S>, dy: &Image<S>, g: &mut [S]) -> Image<S> {
        let per = self.channels / self.groups;
        let hw = x.plane_len();
        let stats = self.stats(x);
        let mut dx = Image::zeros(x.channels(), x.height(), x.width());
        for grp in 0..self.groups {
            let (mean, rstd) = stats[grp];
            let (mean, rstd) = (S::of(mean), S::of(rstd));
            let n = S::of((per * hw) as f64);
            // sums of dxhat and dxhat * xhat over the group
            let mut sum_d = S::zero();
            let mut sum_dx = S::zero();
            for c in grp * per..(grp + 1) * per {
                let gm = p[self.gamma + c];
                let mut g_gamma = S::zero();
                let mut g_beta = S::zero();
                for (&xv, &d) in x.plane(c).iter().zip(dy.plane(c)) {
                    let xhat = (xv - mean) * rstd;
                    g_gamma += d * xhat;
                    g_beta += d;
                    let dxhat = d * gm;
                    sum_d += dxhat;
                    sum_dx += dxhat * xhat;
                }
                g[self.gamma + c] += g_gamma;
                g[self.beta + c] += g_beta;
            }
            for c in grp * per..(grp + 1) * per {
                let gm = p[self.gamma + c];
                let xs = x.plane(c);
                let ds = dy.plane(c);
                let out = dx.plane_mut(c);
                for i in 0..hw {
                    let xhat = (xs[i] - mean) * rstd;
                    let dxhat = ds[i] * gm;
                    out[i] = rstd / n * (n * dxhat - sum_d - xhat * sum_dx);
                }
            }
        }
        dx
    }
}
