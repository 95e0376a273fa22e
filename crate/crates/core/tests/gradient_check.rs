use gatewatch::forecast::lstm::LstmParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst relative error between backprop and central differences.
fn max_relative_error(units: usize, timesteps: usize, batch_size: usize, dropout: Option<f64>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = LstmParams::init(units, 1, &mut rng);
    // Nonzero biases so every gate path carries gradient.
    for b in params.flat.iter_mut() {
        *b += rng.random_range(-0.1..0.1);
    }
    let windows: Vec<Vec<f64>> = (0..batch_size).map(|_| (0..timesteps).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let targets: Vec<f64> = (0..batch_size).map(|_| rng.random_range(0.0..1.0)).collect();
    let batch: Vec<(&[f64], f64)> = windows.iter().map(Vec::as_slice).zip(targets.iter().copied()).collect();
    let masks: Option<Vec<Vec<f64>>> = dropout.map(|p| {
        (0..batch_size)
            .map(|_| (0..units).map(|_| if rng.random_bool(p) { 0.0 } else { 1.0 / (1.0 - p) }).collect())
            .collect()
    });

    let (_, grad) = params.loss_and_grad(&batch, masks.as_deref());
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let original = params.flat[k];
        params.flat[k] = original + STEP;
        let (up, _) = params.loss_and_grad(&batch, masks.as_deref());
        params.flat[k] = original - STEP;
        let (down, _) = params.loss_and_grad(&batch, masks.as_deref());
        params.flat[k] = original;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(grad[k], numeric));
    }
    worst
}

#[test]
fn backprop_matches_central_differences() {
    for (units, timesteps, seed) in [(1, 1, 1), (1, 10, 2), (2, 5, 3), (3, 7, 4), (4, 10, 5)] {
        let err = max_relative_error(units, timesteps, 3, None, seed);
        assert!(err < TOLERANCE, "units={units} timesteps={timesteps}: max relative error {err:e}");
    }
}

#[test]
fn backprop_matches_central_differences_under_dropout() {
    for (units, timesteps, seed) in [(2, 6, 11), (4, 10, 12)] {
        let err = max_relative_error(units, timesteps, 4, Some(0.2), seed);
        assert!(err < TOLERANCE, "units={units} timesteps={timesteps}: max relative error {err:e}");
    }
}
