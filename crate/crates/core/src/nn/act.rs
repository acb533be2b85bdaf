use crate::image::Image;
use crate::scalar::Scalar;

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

#[inline]
pub fn silu_scalar<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad_scalar<S: Scalar>(x: S) -> S {
    let s = sigmoid(x);
    s * (S::one() + x * (S::one() - s))
}

pub fn silu<S: Scalar>(x: &Image<S>) -> Image<S> {
    x.map(silu_scalar)
}

pub fn silu_vec<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| silu_scalar(v)).collect()
}

/// `dx = dy * silu'(x)`.
pub fn silu_backward<S: Scalar>(x: &Image<S>, dy: &Image<S>) -> Image<S> {
    x.zip_map(dy, |xv, g| g * silu_grad_scalar(xv))
        .expect("silu backward shapes")
}

pub fn silu_backward_vec<S: Scalar>(x: &[S], dy: &[S]) -> Vec<S> {
    x.iter()
        .zip(dy)
        .map(|(&xv, &g)| g * silu_grad_scalar(xv))
        .collect()
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<S: Scalar>(x: &Image<S>) -> Image<S> {
    let (c, h, w) = x.shape();
    Image::from_fn(c, 2 * h, 2 * w, |ch, y, xx| x.at(ch, y / 2, xx / 2))
}

pub fn upsample2_backward<S: Scalar>(dy: &Image<S>) -> Image<S> {
    let (c, h2, w2) = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    Image::from_fn(c, h, w, |ch, y, x| {
        dy.at(ch, 2 * y, 2 * x)
            + dy.at(ch, 2 * y, 2 * x + 1)
            + dy.at(ch, 2 * y + 1, 2 * x)
            + dy.at(ch, 2 * y + 1, 2 * x + 1)
    })
}

/// 2x2 average pooling; odd trailing rows/columns are dropped.
pub fn avgpool2<S: Scalar>(x: &Image<S>) -> Image<S> {
    let (c, h, w) = x.shape();
    let q = S::of(0.25);
    Image::from_fn(c, h / 2, w / 2, |ch, y, xx| {
        (x.at(ch, 2 * y, 2 * xx)
            + x.at(ch, 2 * y, 2 * xx + 1)
            + x.at(ch, 2 * y + 1, 2 * xx)
            + x.at(ch, 2 * y + 1, 2 * xx + 1))
            * q
    })
}

pub fn avgpool2_backward<S: Scalar>(dy: &Image<S>, input_shape: (usize, usize, usize)) -> Image<S> {
    let (c, h, w) = input_shape;
    let q = S::of(0.25);
    Image::from_fn(c, h, w, |ch, y, x| {
        if y / 2 < dy.height() && x / 2 < dy.width() {
            dy.at(ch, y / 2, x / 2) * q
        } else {
            S::zero()
        }
    })
}
