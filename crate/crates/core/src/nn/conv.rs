use crate::image::Image;
use crate::nn::param::{Init, ParamLayout};
use crate::scalar::{matmul, Scalar};

/// 2-D convolution with square kernel, zero padding and integer stride,
/// lowered to a single GEMM per image through an im2col buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    weight: usize,
    bias: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: Init,
    ) -> Self {
        let weight = layout.alloc(format!("{name}.weight"), cout * cin * kernel * kernel, init);
        let bias = layout.alloc(format!("{name}.bias"), cout, Init::Zeros);
        Conv2d {
            cin,
            cout,
            kernel,
            stride,
            pad,
            weight,
            bias,
        }
    }

    /// "Same" 3x3 convolution.
    pub fn same3(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(layout, name, cin, cout, 3, 1, 1, Self::default_init(cin, 3))
    }

    pub fn pointwise(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(layout, name, cin, cout, 1, 1, 0, Self::default_init(cin, 1))
    }

    /// Uniform with bound `1/sqrt(fan_in)`.
    pub fn default_init(cin: usize, kernel: usize) -> Init {
        Init::Uniform(1.0 / ((cin * kernel * kernel) as f64).sqrt())
    }

    pub fn param_count(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel + self.cout
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn weights<'a, S>(&self, p: &'a [S]) -> &'a [S] {
        &p[self.weight..self.weight + self.cout * self.cin * self.kernel * self.kernel]
    }

    pub fn forward<S: Scalar>(&self, p: &[S], x: &Image<S>) -> Image<S> {
        let (c, h, w) = x.shape();
        assert_eq!(c, self.cin, "conv input channels");
        let (ho, wo) = self.output_size(h, w);
        let n = ho * wo;
        let kk = self.cin * self.kernel * self.kernel;
        let mut y = Image::zeros(self.cout, ho, wo);
        let bias = &p[self.bias..self.bias + self.cout];
        for (co, &b) in bias.iter().enumerate() {
            y.plane_mut(co).fill(b);
        }
        if self.is_pointwise() {
            matmul(self.weights(p), false, x.data(), false, y.data_mut(), self.cout, kk, n, true);
        } else {
            let col = self.im2col(x, ho, wo);
            matmul(self.weights(p), false, &col, false, y.data_mut(), self.cout, kk, n, true);
        }
        y
    }

    /// Accumulates weight/bias gradients into `g`; returns `dL/dx` when asked.
    pub fn backward<S: Scalar>(
        &self,
        p: &[S],
        x: &Image<S>,
        dy: &Image<S>,
        g: &mut [S],
        need_dx: bool,
    ) -> Option<Image<S>> {
        let (_, h, w) = x.shape();
        let (ho, wo) = self.output_size(h, w);
        assert_eq!(dy.shape(), (self.cout, ho, wo), "conv output gradient shape");
        let n = ho * wo;
        let kk = self.cin * self.kernel * self.kernel;

        for (co, gb) in g[self.bias..self.bias + self.cout].iter_mut().enumerate() {
            *gb += dy.plane(co).iter().copied().sum::<S>();
        }

        let pointwise = self.is_pointwise();
        let col_owned;
        let col: &[S] = if pointwise {
            x.data()
        } else {
            col_owned = self.im2col(x, ho, wo);
            &col_owned
        };
        {
            let gw = &mut g[self.weight..self.weight + self.cout * kk];
            matmul(dy.data(), false, col, true, gw, self.cout, n, kk, true);
        }
        if !need_dx {
            return None;
        }
        let mut dcol = vec![S::zero(); kk * n];
        matmul(self.weights(p), true, dy.data(), false, &mut dcol, kk, self.cout, n, false);
        if pointwise {
            return Some(Image::from_vec(self.cin, h, w, dcol).expect("pointwise dx shape"));
        }
        Some(self.col2im(&dcol, h, w, ho, wo))
    }

    fn im2col<S: Scalar>(&self, x: &Image<S>, ho: usize, wo: usize) -> Vec<S> {
        let (cin, h, w) = x.shape();
        let k = self.kernel;
        let n = ho * wo;
        let mut col = vec![S::zero(); cin * k * k * n];
        let src = x.data();
        for ci in 0..cin {
            let plane = &src[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        if self.stride == 1 {
                            // ix = ox + kx - pad must land in [0, w)
                            let lo = self.pad.saturating_sub(kx);
                            let hi = (w + self.pad - kx).min(wo);
                            if lo < hi {
                                let s0 = lo + kx - self.pad;
                                drow[lo..hi].copy_from_slice(&srow[s0..s0 + (hi - lo)]);
                            }
                        } else {
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    *d = srow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<S: Scalar>(&self, col: &[S], h: usize, w: usize, ho: usize, wo: usize) -> Image<S> {
        let k = self.kernel;
        let n = ho * wo;
        let mut dx = Image::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let plane = dx.plane_mut(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let srcrow = &col[row * n..(row + 1) * n];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let crow = &srcrow[oy * wo..(oy + 1) * wo];
                        if self.stride == 1 {
                            let lo = self.pad.saturating_sub(kx);
                            let hi = (w + self.pad - kx).min(wo);
                            for ox in lo..hi {
                                drow[ox + kx - self.pad] += crow[ox];
                            }
                        } else {
                            for (ox, &v) in crow.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    drow[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}
