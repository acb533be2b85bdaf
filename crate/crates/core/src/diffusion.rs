//! Forward noising, posterior algebra and ancestral sampling.
//!
//! Timesteps are 1-based throughout: `t = 1..=T`, with `alpha_bar(0) = 1`.
//! Schedule quantities are stored and combined in `f64`; only the final
//! per-pixel coefficients are cast to the image scalar type.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthMap, LatentImage, NoiseField, Shape};
use crate::scalar::Scalar;

/// Serializable description of a linear noise schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_linear_schedule(self.timesteps, self.beta_start, self.beta_end)
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            timesteps: 500,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Per-timestep `beta_t`, cumulative `alpha_bar_t` and posterior std `sigma_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
    sigmas: Vec<f64>,
}

/// Linearly spaced betas from `beta_start` to `beta_end` inclusive.
pub fn make_linear_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if timesteps < 1 {
        return Err(Error::Config("schedule needs at least one timestep".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "beta bounds must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let betas: Vec<f64> = if timesteps == 1 {
        vec![beta_start]
    } else {
        let span = beta_end - beta_start;
        let last = (timesteps - 1) as f64;
        (0..timesteps)
            .map(|i| beta_start + span * (i as f64) / last)
            .collect()
    };

    let mut alphas_bar = Vec::with_capacity(timesteps);
    let mut running = 1.0f64;
    for &b in &betas {
        running *= 1.0 - b;
        alphas_bar.push(running);
    }

    let mut sigmas = Vec::with_capacity(timesteps);
    for t in 0..timesteps {
        if t == 0 {
            sigmas.push(0.0);
        } else {
            let var = betas[t] * (1.0 - alphas_bar[t - 1]) / (1.0 - alphas_bar[t]);
            sigmas.push(var.sqrt());
        }
    }

    Ok(NoiseSchedule {
        spec: ScheduleSpec {
            timesteps,
            beta_start,
            beta_end,
        },
        betas,
        alphas_bar,
        sigmas,
    })
}

impl NoiseSchedule {
    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.timesteps(),
            });
        }
        Ok(())
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t` for `t` in `0..=T`; `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_bar[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    /// Variance of `q(y_{t-1} | y_t, y_0)`; exactly zero at `t = 1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t == 1 {
            return 0.0;
        }
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }
}

/// Closed-form marginal: `sqrt(ab_t) * y0 + sqrt(1 - ab_t) * eps`.
pub fn forward_sample<S: Scalar>(
    y0: &LatentImage<S>,
    t: usize,
    eps: &NoiseField<S>,
    schedule: &NoiseSchedule,
) -> Result<LatentImage<S>> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    y0.lincomb(S::of(ab.sqrt()), eps, S::of((1.0 - ab).sqrt()))
}

/// Step-by-step noising with one fresh noise field per step, `s = 1..=t`.
pub fn iterative_forward<S: Scalar>(
    y0: &LatentImage<S>,
    t: usize,
    eps_seq: &[NoiseField<S>],
    schedule: &NoiseSchedule,
) -> Result<LatentImage<S>> {
    schedule.check_t(t)?;
    if eps_seq.len() != t {
        return Err(Error::Argument(format!(
            "iterative forward to t={t} needs {t} noise fields, got {}",
            eps_seq.len()
        )));
    }
    let mut y = y0.clone();
    for (s, eps) in (1..=t).zip(eps_seq) {
        let b = schedule.beta(s);
        y = y.lincomb(S::of((1.0 - b).sqrt()), eps, S::of(b.sqrt()))?;
    }
    Ok(y)
}

/// Predicted clean image from a noisy state and a noise estimate.
pub fn estimate_y0<S: Scalar>(
    y_t: &LatentImage<S>,
    t: usize,
    eps_hat: &NoiseField<S>,
    schedule: &NoiseSchedule,
) -> Result<LatentImage<S>> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    let inv = 1.0 / ab.sqrt();
    y_t.lincomb(S::of(inv), eps_hat, S::of(-inv * (1.0 - ab).sqrt()))
}

/// Mean and variance of `q(y_{t-1} | y_t, y_0)`.
pub fn posterior_params<S: Scalar>(
    y_t: &LatentImage<S>,
    y0: &LatentImage<S>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<(LatentImage<S>, f64)> {
    schedule.check_t(t)?;
    let (c_t, c_0) = posterior_mean_coefficients(schedule, t);
    let mean = y_t.lincomb(S::of(c_t), y0, S::of(c_0))?;
    Ok((mean, schedule.posterior_variance(t)))
}

/// Coefficients `(c_t, c_0)` of `y_t` and `y_0` in the posterior mean.
pub fn posterior_mean_coefficients(schedule: &NoiseSchedule, t: usize) -> (f64, f64) {
    let b = schedule.beta(t);
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let c_t = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - b).sqrt();
    let c_0 = ab_prev.sqrt() * b / (1.0 - ab);
    (c_t, c_0)
}

/// One reverse iteration `y_t -> y_{t-1}`. `z` is ignored at `t = 1`.
pub fn reverse_step<S: Scalar>(
    y_t: &LatentImage<S>,
    t: usize,
    eps_hat: &NoiseField<S>,
    z: &NoiseField<S>,
    schedule: &NoiseSchedule,
) -> Result<LatentImage<S>> {
    schedule.check_t(t)?;
    let b = schedule.beta(t);
    let ab = schedule.alpha_bar(t);
    let a = (1.0 - b).sqrt();
    let mut out = y_t.lincomb(S::of(1.0 / a), eps_hat, S::of(-b / ((1.0 - ab).sqrt() * a)))?;
    if t > 1 {
        z.ensure_same_shape(y_t)?;
        let sigma = S::of(schedule.sigma(t));
        for (o, &zv) in out.data_mut().iter_mut().zip(z.data()) {
            *o += sigma * zv;
        }
    }
    Ok(out)
}

/// Conditional noise estimator `f(x, y_t, t)`.
pub trait NoisePredictor<S: Scalar> {
    fn predict(&self, cond: &DepthMap<S>, y_t: &LatentImage<S>, t: usize) -> Result<NoiseField<S>>;
}

impl<S, F> NoisePredictor<S> for F
where
    S: Scalar,
    F: Fn(&DepthMap<S>, &LatentImage<S>, usize) -> Result<NoiseField<S>>,
{
    fn predict(&self, cond: &DepthMap<S>, y_t: &LatentImage<S>, t: usize) -> Result<NoiseField<S>> {
        self(cond, y_t, t)
    }
}

/// Full reverse chain from `y_T ~ N(0, I)` down to a clamped `y_0`.
///
/// Random draws come from a ChaCha8 stream seeded with `seed`, consumed in
/// this order: all of `y_T` (channel-major), then one `z` field for each
/// `t = T, T-1, ..., 2`.
pub fn ancestral_sample<S: Scalar, P: NoisePredictor<S> + ?Sized>(
    predictor: &P,
    cond: &DepthMap<S>,
    channels: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<LatentImage<S>> {
    let shape: Shape = (channels, cond.height(), cond.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = LatentImage::<S>::standard_normal(shape, &mut rng);
    let zero = NoiseField::<S>::zeros(shape.0, shape.1, shape.2);
    for t in (1..=schedule.timesteps()).rev() {
        let eps_hat = predictor.predict(cond, &y, t)?;
        if eps_hat.shape() != shape {
            return Err(Error::ModelContract(format!(
                "predictor returned {:?} for a {:?} state at t={t}",
                eps_hat.shape(),
                shape
            )));
        }
        let z = if t > 1 {
            NoiseField::<S>::standard_normal(shape, &mut rng)
        } else {
            zero.clone()
        };
        y = reverse_step(&y, t, &eps_hat, &z, schedule)?;
    }
    Ok(y.clamp(-S::one(), S::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use proptest::prelude::*;
    use rand::Rng;

    fn standard() -> NoiseSchedule {
        make_linear_schedule(500, 1e-4, 0.02).unwrap()
    }

    fn random_image(shape: Shape, seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(shape.0, shape.1, shape.2, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_schedule_endpoints() {
        let s = standard();
        assert_eq!(s.timesteps(), 500);
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(500) - 0.02).abs() < 1e-15);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.sigma(1), 0.0);
        assert!(s.alpha_bar(500) < 0.01);
    }

    #[test]
    fn betas_are_evenly_spaced_and_alpha_bar_decreasing() {
        let s = standard();
        let step = s.beta(2) - s.beta(1);
        for t in 2..=500 {
            assert!((s.beta(t) - s.beta(t - 1) - step).abs() < 1e-15);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
        }
    }

    #[test]
    fn single_step_schedule_uses_beta_start() {
        let s = make_linear_schedule(1, 0.01, 0.5).unwrap();
        assert_eq!(s.betas(), &[0.01]);
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        for (t, a, b) in [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)] {
            assert!(matches!(make_linear_schedule(t, a, b), Err(Error::Config(_))));
        }
    }

    #[test]
    fn out_of_range_timesteps_are_index_errors() {
        let s = make_linear_schedule(10, 1e-4, 0.02).unwrap();
        let y = Image::<f64>::zeros(1, 2, 2);
        for t in [0, 11] {
            assert!(matches!(
                forward_sample(&y, t, &y, &s),
                Err(Error::TimestepOutOfRange { .. })
            ));
            assert!(estimate_y0(&y, t, &y, &s).is_err());
            assert!(posterior_params(&y, &y, t, &s).is_err());
            assert!(reverse_step(&y, t, &y, &y, &s).is_err());
        }
    }

    #[test]
    fn forward_sample_degenerate_inputs() {
        let s = standard();
        let y0 = random_image((3, 4, 4), 1);
        let eps = random_image((3, 4, 4), 2);
        let zero = Image::<f64>::zeros(3, 4, 4);
        let t = 123;
        let a = forward_sample(&y0, t, &zero, &s).unwrap();
        let want = y0.scale(s.alpha_bar(t).sqrt());
        assert!(a.max_abs_diff(&want).unwrap() < 1e-15);
        let b = forward_sample(&zero, t, &eps, &s).unwrap();
        let want = eps.scale((1.0 - s.alpha_bar(t)).sqrt());
        assert!(b.max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn iterative_forward_zero_noise_matches_closed_form() {
        let s = standard();
        let y0 = random_image((3, 4, 4), 3);
        let zero = Image::<f64>::zeros(3, 4, 4);
        for t in [1, 7, 250, 500] {
            let seq = vec![zero.clone(); t];
            let a = iterative_forward(&y0, t, &seq, &s).unwrap();
            let b = forward_sample(&y0, t, &zero, &s).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn iterative_forward_single_step_coincides() {
        let s = standard();
        let y0 = random_image((3, 4, 4), 4);
        let e = random_image((3, 4, 4), 5);
        let a = iterative_forward(&y0, 1, std::slice::from_ref(&e), &s).unwrap();
        let b = forward_sample(&y0, 1, &e, &s).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-15);
    }

    #[test]
    fn iterative_forward_rejects_length_mismatch() {
        let s = standard();
        let y0 = Image::<f64>::zeros(1, 2, 2);
        let seq = vec![y0.clone(); 3];
        assert!(matches!(
            iterative_forward(&y0, 4, &seq, &s),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn estimate_y0_with_zero_noise_rescales() {
        let s = standard();
        let y = random_image((3, 4, 4), 6);
        let zero = Image::<f64>::zeros(3, 4, 4);
        let t = 321;
        let got = estimate_y0(&y, t, &zero, &s).unwrap();
        let want = y.scale(1.0 / s.alpha_bar(t).sqrt());
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn posterior_at_first_step_returns_clean_image() {
        let s = standard();
        let yt = random_image((3, 4, 4), 7);
        let y0 = random_image((3, 4, 4), 8);
        let (mean, var) = posterior_params(&yt, &y0, 1, &s).unwrap();
        assert_eq!(var, 0.0);
        let (c_t, c_0) = posterior_mean_coefficients(&s, 1);
        assert_eq!(c_t, 0.0);
        assert!((c_0 - 1.0).abs() < 1e-12);
        assert!(mean.max_abs_diff(&y0).unwrap() < 1e-12);
    }

    #[test]
    fn posterior_of_zero_inputs_is_zero() {
        let s = standard();
        let zero = Image::<f64>::zeros(3, 4, 4);
        let (mean, _) = posterior_params(&zero, &zero, 200, &s).unwrap();
        assert!(mean.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn posterior_variance_matches_sigma_squared() {
        let s = standard();
        for t in 1..=500 {
            assert!((s.posterior_variance(t) - s.sigma(t).powi(2)).abs() < 1e-15);
        }
    }

    #[test]
    fn reverse_step_zero_estimates_rescale() {
        let s = standard();
        let y = random_image((3, 4, 4), 9);
        let zero = Image::<f64>::zeros(3, 4, 4);
        let t = 77;
        let got = reverse_step(&y, t, &zero, &zero, &s).unwrap();
        let want = y.scale(1.0 / (1.0 - s.beta(t)).sqrt());
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn reverse_step_at_boundary_inverts_forward_noise() {
        let s = standard();
        let y0 = random_image((3, 4, 4), 10);
        let e = random_image((3, 4, 4), 11);
        let junk = random_image((3, 4, 4), 12);
        let y1 = forward_sample(&y0, 1, &e, &s).unwrap();
        let back = reverse_step(&y1, 1, &e, &junk, &s).unwrap();
        assert!(back.max_abs_diff(&y0).unwrap() < 1e-5);
    }

    #[test]
    fn ancestral_sample_is_deterministic_and_shaped() {
        let s = make_linear_schedule(20, 1e-3, 0.2).unwrap();
        let cond = DepthMap::<f32>::zeros(6, 5, 1.0);
        let pred = |_: &DepthMap<f32>, y: &LatentImage<f32>, _t: usize| Ok(y.scale(0.1));
        let a = ancestral_sample(&pred, &cond, 3, &s, 42).unwrap();
        let b = ancestral_sample(&pred, &cond, 3, &s, 42).unwrap();
        assert_eq!(a.shape(), (3, 6, 5));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let c = ancestral_sample(&pred, &cond, 3, &s, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ancestral_sample_rejects_misshaped_predictions() {
        let s = make_linear_schedule(5, 1e-3, 0.2).unwrap();
        let cond = DepthMap::<f64>::zeros(4, 4, 1.0);
        let pred = |_: &DepthMap<f64>, _: &LatentImage<f64>, _t: usize| Ok(Image::zeros(1, 4, 4));
        assert!(matches!(
            ancestral_sample(&pred, &cond, 3, &s, 0),
            Err(Error::ModelContract(_))
        ));
    }

    proptest! {
        #[test]
        fn estimate_y0_inverts_forward_sample(t in 1usize..=500, seed in any::<u64>()) {
            let s = standard();
            let y0 = random_image((2, 3, 3), seed);
            let e = random_image((2, 3, 3), seed ^ 0xabcdef);
            let yt = forward_sample(&y0, t, &e, &s).unwrap();
            let back = estimate_y0(&yt, t, &e, &s).unwrap();
            prop_assert!(back.max_abs_diff(&y0).unwrap() < 1e-5);
        }

        #[test]
        fn reverse_step_is_posterior_mean_of_estimated_y0(t in 1usize..=500, seed in any::<u64>()) {
            let s = standard();
            let yt = random_image((2, 3, 3), seed);
            let eps = random_image((2, 3, 3), seed.wrapping_add(1));
            let zero = Image::<f64>::zeros(2, 3, 3);
            let step = reverse_step(&yt, t, &eps, &zero, &s).unwrap();
            let y0 = estimate_y0(&yt, t, &eps, &s).unwrap();
            let (mean, _) = posterior_params(&yt, &y0, t, &s).unwrap();
            prop_assert!(step.max_abs_diff(&mean).unwrap() < 1e-6);
        }
    }
}
