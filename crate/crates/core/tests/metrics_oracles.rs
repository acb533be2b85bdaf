use proptest::prelude::*;
use tactile_diffusion::eval::{classifier_metrics, mse, ssim};
use tactile_diffusion::image::Image;
use tactile_diffusion::Error;

struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn oracle_pair(k: usize) -> (Image<f64>, Image<f64>) {
    let mut rng = SplitMix(1000 + k as u64);
    let (h, w) = (16 + k, 20 + 2 * (k % 5));
    let amp = 0.02 + 0.04 * k as f64;
    let a = Image::from_fn(3, h, w, |c, y, x| {
        0.5 + 0.3 * (0.3 * x as f64 + 0.2 * y as f64 + c as f64).sin() + 0.2 * (rng.unit() - 0.5)
    });
    let b = Image::from_fn(3, h, w, |c, y, x| (a.at(c, y, x) + amp * (2.0 * rng.unit() - 1.0)).clamp(0.0, 1.0));
    (a, b)
}

// (ssim, mse) from scikit-image's structural_similarity with gaussian
// weights and population covariance, and numpy for MSE in 0-255 units.
const FROZEN: [(f64, f64); 20] = [
    (0.9950018235874577, 8.742220272031652),
    (0.9538771484900413, 77.48240272835851),
    (0.8908784502850436, 219.84767603868627),
    (0.8132601257089657, 415.6938593031208),
    (0.7095955407186304, 694.3861538739307),
    (0.6579793069236101, 1037.175059652731),
    (0.5543309486513447, 1398.7908669693986),
    (0.4930039399456227, 1861.7092804185577),
    (0.43973536700123184, 2306.7493889893885),
    (0.394551873447172, 2816.1487621172387),
    (0.3177407167853794, 3461.2069536161143),
    (0.2628910687417127, 4093.20518631961),
    (0.2780299511296834, 4403.024204949194),
    (0.225457707554887, 5073.011260375109),
    (0.22679108842818596, 5336.064025368947),
    (0.167260920985677, 6189.633805279524),
    (0.15421054321999453, 6724.337350787871),
    (0.15733668284780322, 7336.534655160625),
    (0.14530229597888436, 7891.120144154925),
    (0.11818345683760374, 8563.80891896515),
];

#[test]
fn ssim_and_mse_match_reference_implementations() {
    for (k, &(want_ssim, want_mse)) in FROZEN.iter().enumerate() {
        let (a, b) = oracle_pair(k);
        let s = ssim(&a, &b).unwrap();
        let m = mse(&a, &b).unwrap();
        assert!((s - want_ssim).abs() < 1e-9, "pair {k}: ssim {s} vs {want_ssim}");
        assert!((m - want_mse).abs() <= 1e-9 * want_mse, "pair {k}: mse {m} vs {want_mse}");
    }
}

#[test]
fn inverted_image_is_anticorrelated() {
    let (a, _) = oracle_pair(3);
    let neg = a.map(|v| 1.0 - v);
    assert!(ssim(&a, &neg).unwrap() < 0.0);
}

#[test]
fn metrics_reject_mismatched_or_tiny_inputs() {
    let a = Image::<f64>::zeros(3, 16, 16);
    let b = Image::<f64>::zeros(3, 16, 15);
    assert!(ssim(&a, &b).is_err());
    assert!(mse(&a, &b).is_err());
    let small = Image::<f64>::zeros(3, 8, 8);
    assert!(ssim(&small, &small).is_err());
}

#[test]
fn constant_classifier_scores() {
    let labels: Vec<usize> = (0..54).map(|i| i % 27).collect();
    let m = classifier_metrics(&vec![0; 54], &labels, 27).unwrap();
    assert!((m.accuracy_pct - 100.0 / 27.0).abs() < 1e-9);
    assert!((m.precision - (2.0 / 54.0) / 27.0).abs() < 1e-12);
    assert!((m.recall - 1.0 / 27.0).abs() < 1e-12);
    assert!(matches!(classifier_metrics(&[0], &[0, 1], 27), Err(Error::Argument(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ssim_is_symmetric_bounded_and_one_on_identity(k in 0usize..20) {
        let (a, b) = oracle_pair(k);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn perfect_predictions_score_full_marks(labels in prop::collection::vec(0usize..27, 1..80)) {
        let m = classifier_metrics(&labels, &labels, 27).unwrap();
        prop_assert!((m.accuracy_pct - 100.0).abs() < 1e-9);
        prop_assert!(m.precision <= 1.0 && m.recall <= 1.0);
    }
}
