use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_shape<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Argument(format!(
            "images differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn gaussian_taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut w = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-0.5 * d * d / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

// Separable Gaussian filter evaluated only where the window fits.
fn filter_valid(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_taps();
    let n = k.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|i| k[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5), data
/// range 1, population statistics, averaged over the windows that fit
/// inside the image and then over channels.
pub fn ssim<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    same_shape(a, b)?;
    let (c, h, w) = a.shape();
    let n = 2 * SSIM_RADIUS + 1;
    if h < n || w < n {
        return Err(Error::Argument(format!("SSIM needs images of at least {n}x{n}, got {h}x{w}")));
    }
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = a.plane(ch).iter().map(|v| v.f64()).collect();
        let y: Vec<f64> = b.plane(ch).iter().map(|v| v.f64()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (ux, uy) = (filter_valid(&x, h, w), filter_valid(&y, h, w));
        let (uxx, uyy, uxy) = (filter_valid(&xx, h, w), filter_valid(&yy, h, w), filter_valid(&xy, h, w));
        let mut sum = 0.0;
        for i in 0..ux.len() {
            let (mx, my) = (ux[i], uy[i]);
            let vx = uxx[i] - mx * mx;
            let vy = uyy[i] - my * my;
            let cov = uxy[i] - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += sum / ux.len() as f64;
    }
    Ok(total / c as f64)
}

/// Mean squared error in 0-255 intensity units for images in `[0, 1]`.
pub fn mse<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    same_shape(a, b)?;
    if a.is_empty() {
        return Err(Error::Argument("MSE of empty images".into()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| {
            let d = (p.f64() - q.f64()) * 255.0;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub accuracy_pct: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Accuracy in percent with macro-averaged precision and recall over
/// `classes`; a class never predicted (or never present) counts as 0.
pub fn classifier_metrics(predictions: &[usize], labels: &[usize], classes: usize) -> Result<ClassifierMetrics> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "need equal, non-empty prediction and label lists ({} vs {})",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(bad) = predictions.iter().chain(labels).find(|&&c| c >= classes) {
        return Err(Error::Argument(format!("class {bad} outside 0..{classes}")));
    }
    let mut tp = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    let mut actual = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        predicted[p] += 1;
        actual[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = (0..classes).map(|c| ratio(tp[c], predicted[c])).sum::<f64>() / classes as f64;
    let recall = (0..classes).map(|c| ratio(tp[c], actual[c])).sum::<f64>() / classes as f64;
    let correct: usize = tp.iter().sum();
    Ok(ClassifierMetrics {
        accuracy_pct: 100.0 * correct as f64 / labels.len() as f64,
        precision,
        recall,
    })
}
