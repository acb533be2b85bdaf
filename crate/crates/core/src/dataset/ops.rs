use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{LatentImage, TactileImage};
use crate::scalar::Scalar;

/// Signed contact foreground `img - background`, in `[-1, 1]`.
pub fn extract_foreground<S: Scalar>(
    img: &TactileImage<S>,
    background: &TactileImage<S>,
) -> Result<LatentImage<S>> {
    shapes_match(img, background)?;
    img.zip_map(background, |a, b| a - b)
}

/// Adds a foreground back onto any no-contact image, clamped to `[0, 1]`.
pub fn composite_background<S: Scalar>(
    foreground: &LatentImage<S>,
    background: &TactileImage<S>,
) -> Result<TactileImage<S>> {
    shapes_match(foreground, background)?;
    foreground.zip_map(background, |f, b| (b + f).max(S::zero()).min(S::one()))
}

fn shapes_match<S: Scalar>(a: &TactileImage<S>, b: &TactileImage<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Argument(format!(
            "image shape {:?} does not match background {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Seeded shuffle, then the first `round(train_fraction * n)` items train.
pub fn split_pairs<T: Clone>(samples: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, test) = split_indices(samples.len(), train_fraction, seed)?;
    Ok((
        train.iter().map(|&i| samples[i].clone()).collect(),
        test.iter().map(|&i| samples[i].clone()).collect(),
    ))
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Argument("cannot split an empty sample set".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (train_fraction * n as f64).round() as usize;
    let test = idx.split_off(cut.min(n));
    Ok((idx, test))
}

/// `floor(fraction * n)` indices chosen by a seeded shuffle, in ascending order.
pub fn subset_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} must lie in (0, 1]")));
    }
    let take = (fraction * n as f64 + 1e-9).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(take);
    idx.sort_unstable();
    Ok(idx)
}

/// Lighting randomization: global brightness in `[0.8, 1.2]`, per-channel
/// gain in `[0.9, 1.1]` and an offset in `[-0.05, 0.05]`, clamped.
pub fn augment_lighting<S: Scalar>(img: &TactileImage<S>, seed: u64) -> TactileImage<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let brightness: f64 = rng.random_range(0.8..=1.2);
    let gains: Vec<f64> = (0..img.channels()).map(|_| rng.random_range(0.9..=1.1)).collect();
    let offset: f64 = rng.random_range(-0.05..=0.05);
    let mut out = img.clone();
    for (c, gain) in gains.iter().enumerate() {
        let scale = S::of(brightness * gain);
        for v in out.plane_mut(c) {
            *v = (*v * scale + S::of(offset)).max(S::zero()).min(S::one());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn ramp(seed: usize) -> Image<f64> {
        Image::from_fn(3, 8, 8, |c, y, x| ((c * 17 + y * 5 + x * 3 + seed) % 200) as f64 / 255.0)
    }

    #[test]
    fn foreground_of_background_is_zero() {
        let bg = ramp(1);
        let fg = extract_foreground(&bg, &bg).unwrap();
        assert!(fg.data().iter().all(|&v| v == 0.0));
        assert_eq!(composite_background(&fg, &bg).unwrap(), bg);
    }

    #[test]
    fn shape_mismatch_is_argument_error() {
        let a = Image::<f64>::zeros(3, 8, 8);
        let b = Image::<f64>::zeros(3, 8, 9);
        assert!(matches!(extract_foreground(&a, &b), Err(Error::Argument(_))));
        assert!(matches!(composite_background(&a, &b), Err(Error::Argument(_))));
    }

    #[test]
    fn compositing_on_two_backgrounds_differs_by_background() {
        let fg = ramp(3).map(|v| (v - 0.4) * 0.3);
        let (b1, b2) = (ramp(5).map(|v| v * 0.5 + 0.2), ramp(9).map(|v| v * 0.5 + 0.2));
        let o1 = composite_background(&fg, &b1).unwrap();
        let o2 = composite_background(&fg, &b2).unwrap();
        for i in 0..o1.len() {
            let unclamped = [o1.data()[i], o2.data()[i]].iter().all(|v| *v > 0.0 && *v < 1.0);
            if unclamped {
                let d = (o1.data()[i] - o2.data()[i]) - (b1.data()[i] - b2.data()[i]);
                assert!(d.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_80_20() {
        let items: Vec<u32> = (0..100).collect();
        let (tr, te) = split_pairs(&items, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let (tr2, te2) = split_pairs(&items, 0.8, 3).unwrap();
        assert_eq!((tr.clone(), te.clone()), (tr2, te2));
        let mut all: Vec<u32> = tr.iter().chain(te.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert!(split_pairs::<u32>(&[], 0.8, 3).is_err());
        assert!(split_pairs(&items, 1.0, 3).is_err());
    }

    #[test]
    fn subset_uses_floor() {
        assert_eq!(subset_indices(864, 0.2, 1).unwrap().len(), 172);
        assert_eq!(subset_indices(10, 0.2, 1).unwrap().len(), 2);
        assert_eq!(subset_indices(10, 1.0, 1).unwrap().len(), 10);
        assert_eq!(subset_indices(37, 0.2, 4).unwrap(), subset_indices(37, 0.2, 4).unwrap());
        assert!(subset_indices(10, 0.0, 1).is_err());
    }

    #[test]
    fn augmentation_is_deterministic_and_bounded() {
        let img = ramp(2);
        let a = augment_lighting(&img, 11);
        assert_eq!(a, augment_lighting(&img, 11));
        assert_ne!(a, augment_lighting(&img, 12));
        assert_eq!(a.shape(), img.shape());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn augmentation_preserves_mean_on_average() {
        let img = Image::<f64>::from_fn(3, 6, 6, |c, y, x| 0.3 + 0.02 * (c + y + x) as f64);
        let base = img.mean();
        let n = 10_000;
        let mean = (0..n).map(|s| augment_lighting(&img, s).mean()).sum::<f64>() / n as f64;
        assert!((mean / base - 1.0).abs() < 0.02, "{mean} vs {base}");
    }
}
