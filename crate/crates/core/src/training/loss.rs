use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffusion::{forward_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::{Image, NoiseField};
use crate::model::{DenoiserConfig, DenoiserParams};
use crate::scalar::Scalar;

/// One training example: normalized depth condition and foreground target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair<S> {
    /// Stable identifier; keys the item's noise stream.
    pub id: u64,
    /// `1 x H x W` depth in `[0, 1]`.
    pub cond: Image<S>,
    /// `3 x H x W` foreground `y_0` in `[-1, 1]`.
    pub y0: Image<S>,
}

/// The random draws that turn a pair into a denoising problem.
#[derive(Clone, Debug)]
pub struct NoisyDraw<S> {
    pub t: usize,
    pub eps: NoiseField<S>,
}

/// `t ~ U{1..T}` then `eps ~ N(0, I)` from the stream `(seed, id)`.
///
/// Keying the stream by item id rather than batch position makes the batch
/// loss independent of item order.
pub fn draw_for_item<S: Scalar>(pair: &TrainingPair<S>, schedule: &NoiseSchedule, seed: u64) -> NoisyDraw<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair.id);
    let t = rng.random_range(1..=schedule.timesteps());
    let eps = NoiseField::standard_normal(pair.y0.shape(), &mut rng);
    NoisyDraw { t, eps }
}

fn check_batch<S: Scalar>(batch: &[TrainingPair<S>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Argument("diffusion loss needs a non-empty batch".into()));
    }
    Ok(())
}

fn check_loss(loss: f64) -> Result<f64> {
    if !loss.is_finite() {
        return Err(Error::TrainingHealth(format!("non-finite diffusion loss {loss}")));
    }
    Ok(loss)
}

/// Mean over items and elements of `(eps - f(x, y_t, t))^2` for an arbitrary
/// noise predictor `f(cond, y_t, t)`.
pub fn diffusion_loss_with<S, F>(predict: F, batch: &[TrainingPair<S>], schedule: &NoiseSchedule, seed: u64) -> Result<f64>
where
    S: Scalar,
    F: Fn(&Image<S>, &Image<S>, usize) -> Result<Image<S>>,
{
    check_batch(batch)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for pair in batch {
        let draw = draw_for_item(pair, schedule, seed);
        let y_t = forward_sample(&pair.y0, draw.t, &draw.eps, schedule)?;
        let pred = predict(&pair.cond, &y_t, draw.t)?;
        pred.ensure_same_shape(&draw.eps)?;
        total += pred
            .data()
            .iter()
            .zip(draw.eps.data())
            .map(|(p, e)| (p.f64() - e.f64()).powi(2))
            .sum::<f64>();
        count += pred.len();
    }
    check_loss(total / count as f64)
}

/// Denoising loss of the network on `batch`.
pub fn diffusion_loss<S: Scalar>(
    params: &DenoiserParams<S>,
    batch: &[TrainingPair<S>],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    diffusion_loss_with(|c, y, t| params.predict_normalized(c, y, t), batch, schedule, seed)
}

/// Loss and its gradient with respect to every parameter.
///
/// Items run in parallel; per-item gradients are summed in batch order, so
/// the result does not depend on the number of worker threads.
pub fn diffusion_loss_and_grad<S: Scalar>(
    params: &DenoiserParams<S>,
    batch: &[TrainingPair<S>],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<(f64, Vec<S>)> {
    check_batch(batch)?;
    let numel = batch.len() * DenoiserConfig::OUT_CHANNELS * batch[0].y0.plane_len();
    let scale = S::of(2.0 / numel as f64);
    let per_item: Vec<(f64, Vec<S>)> = batch
        .par_iter()
        .map(|pair| -> Result<(f64, Vec<S>)> {
            let draw = draw_for_item(pair, schedule, seed);
            let y_t = forward_sample(&pair.y0, draw.t, &draw.eps, schedule)?;
            let (pred, cache) = params.forward_train(&pair.cond, &y_t, draw.t)?;
            let sq = pred
                .data()
                .iter()
                .zip(draw.eps.data())
                .map(|(p, e)| (p.f64() - e.f64()).powi(2))
                .sum::<f64>();
            let dout = pred.zip_map(&draw.eps, |p, e| scale * (p - e))?;
            let mut g = vec![S::zero(); params.param_count()];
            params.backward(&cache, &dout, &mut g);
            Ok((sq, g))
        })
        .collect::<Result<_>>()?;

    let mut grads = vec![S::zero(); params.param_count()];
    let mut total = 0.0;
    for (sq, g) in per_item {
        total += sq;
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let loss = check_loss(total / numel as f64)?;
    Ok((loss, grads))
}
