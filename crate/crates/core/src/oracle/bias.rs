use crate::error::{Error, Result};

/// Lower bound on the bias normalizer `|mean Q^MC|`.
pub const BIAS_FLOOR: f64 = 1e-3;

/// Normalized value-estimation bias `(Q̂ − Q^MC) / max(|mean Q^MC|, floor)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasReport {
    pub mean: f64,
    pub std: f64,
    pub normalizer: f64,
    pub samples: usize,
}

impl BiasReport {
    pub fn csv_header() -> &'static str {
        "bias_mean,bias_std,bias_normalizer,bias_samples"
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.mean, self.std, self.normalizer, self.samples)
    }
}

/// Summarizes paired critic estimates and Monte-Carlo returns, one pair per
/// sampled state (returns already averaged over that state's rollouts).
pub fn bias_report(q_hat: &[f64], q_mc: &[f64], min_samples: usize) -> Result<BiasReport> {
    if q_hat.len() != q_mc.len() {
        return Err(Error::Invalid("critic and Monte-Carlo samples differ in count".into()));
    }
    let n = q_hat.len();
    if n == 0 || n < min_samples {
        return Err(Error::Invalid(format!("{n} samples, need at least {}", min_samples.max(1))));
    }
    let mc_mean = q_mc.iter().sum::<f64>() / n as f64;
    let normalizer = mc_mean.abs().max(BIAS_FLOOR);
    let b: Vec<f64> = q_hat.iter().zip(q_mc).map(|(q, m)| (q - m) / normalizer).collect();
    let mean = b.iter().sum::<f64>() / n as f64;
    let std = (b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(BiasReport {
        mean,
        std,
        normalizer,
        samples: n,
    })
}
