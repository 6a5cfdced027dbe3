//! Gaussian noise with a power-law spectrum, `PSD ∝ 1/f^β`.
//!
//! Complex Gaussian coefficients scaled by `f^(−β/2)` on the real-FFT
//! frequency grid are inverted and divided by the exact marginal standard
//! deviation, so every sample has unit variance.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// One unit-variance series of length `n`.
pub fn powerlaw_series<R: Rng>(beta: f64, n: usize, rng: &mut R, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![rng.sample(StandardNormal)];
    }
    let half = n / 2;
    let fmin = 1.0 / n as f64;
    let scale: Vec<f64> = (0..=half)
        .map(|k| {
            let f = (k as f64 / n as f64).max(fmin);
            f.powf(-beta / 2.0)
        })
        .collect();
    // Exact marginal variance of the inverse transform below, DC and
    // Nyquist terms included.
    let mut var = 2.0 * scale[0] * scale[0];
    for (k, s) in scale.iter().enumerate().skip(1) {
        var += if n % 2 == 0 && k == half { 2.0 * s * s } else { 4.0 * s * s };
    }
    let sigma = var.sqrt() / n as f64;

    let mut spec: Vec<Complex<f64>> = scale
        .iter()
        .map(|&s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex::new(re * s, im * s)
        })
        .collect();
    if n % 2 == 0 {
        spec[half].im = 0.0;
        spec[half].re *= 2f64.sqrt();
    }
    spec[0].im = 0.0;
    spec[0].re *= 2f64.sqrt();

    let mut full = vec![Complex::new(0.0, 0.0); n];
    full[..=half].copy_from_slice(&spec);
    for k in 1..n - half {
        full[n - k] = spec[k].conj();
    }
    planner.plan_fft_inverse(n).process(&mut full);
    full.iter().map(|c| c.re / n as f64 / sigma).collect()
}

/// Noise for `count` action sequences of shape `horizon × dims`, laid out
/// sequence-major then time-major (`[s][t][d]`). Each action dimension is an
/// independent series over time.
pub fn colored_noise<R: Rng>(beta: f64, dims: usize, horizon: usize, count: usize, rng: &mut R) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let mut out = vec![0.0; count * horizon * dims];
    for s in 0..count {
        for d in 0..dims {
            let series = powerlaw_series(beta, horizon, rng, &mut planner);
            for (t, v) in series.into_iter().enumerate() {
                out[(s * horizon + t) * dims + d] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats(beta: f64, len: usize, count: usize, seed: u64) -> (f64, f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = colored_noise(beta, 1, len, count, &mut rng);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut lag = 0.0;
        let mut pairs = 0.0;
        for s in x.chunks(len) {
            for w in s.windows(2) {
                lag += (w[0] - mean) * (w[1] - mean);
                pairs += 1.0;
            }
        }
        (mean, var, lag / pairs / var)
    }

    #[test]
    fn white_noise_is_uncorrelated() {
        let (m, v, r1) = stats(0.0, 10, 10_000, 1);
        assert!(m.abs() < 0.02, "{m}");
        assert!((v - 1.0).abs() < 0.02, "{v}");
        assert!(r1.abs() < 0.05, "{r1}");
    }

    #[test]
    fn brown_noise_is_positively_correlated_with_unit_variance() {
        for (beta, len) in [(2.0, 8), (2.0, 64), (2.5, 6), (1.0, 7)] {
            let (m, v, r1) = stats(beta, len, 160_000 / len, 2);
            assert!(m.abs() < 0.05, "beta {beta}: mean {m}");
            assert!((v - 1.0).abs() < 0.02, "beta {beta} len {len}: var {v}");
            if beta >= 2.0 {
                assert!(r1 > 0.3, "beta {beta}: lag-1 {r1}");
            }
        }
    }

    #[test]
    fn layout_is_sequence_then_time_then_dim() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let x = colored_noise(1.0, 3, 5, 2, &mut a);
        assert_eq!(x.len(), 30);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let mut planner = FftPlanner::new();
        let first = powerlaw_series(1.0, 5, &mut b, &mut planner);
        let dim0: Vec<f64> = (0..5).map(|t| x[t * 3]).collect();
        assert_eq!(dim0, first);
    }
}
