//! Curiosity signal from one-step latent prediction error, with EMA
//! normalization, clipping and min-max reweighting.

use crate::agent::{Agent, L2_EPS};
use crate::error::{Error, Result};
use crate::nn::{Graph, Mode, Tensor};
use crate::scalar::Scalar;

/// Sign applied to `ξ` in the min-max reweighting `(r_i / r_max)^(±ξ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExponentSign {
    /// `(r_i / r_max)^ξ`, order preserving, values in `[0, 1]`.
    Positive,
    /// `r_i^(−ξ) / r_max^(−ξ)`, order reversing, values `≥ 1`.
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizerConfig {
    pub decay: f64,
    pub xi: f64,
    pub sign: ExponentSign,
    pub std_floor: f64,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self {
            decay: 0.99,
            xi: 0.5,
            sign: ExponentSign::Positive,
            std_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicBatch {
    pub raw: Vec<f64>,
    /// `max((ℓ − μ)/σ, 0)` before reweighting.
    pub clipped: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Statistics used for this batch (before the EMA update).
    pub mean: f64,
    pub std: f64,
    pub fraction_clipped: f64,
    pub max_raw: f64,
}

/// EMA estimate of the mean and spread of raw prediction errors.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardNormalizer {
    pub config: NormalizerConfig,
    mean: f64,
    sq_mean: f64,
    initialized: bool,
}

/// Mean computed relative to the minimum so that a constant batch has its
/// mean reproduced exactly.
fn shifted_moments(xs: &[f64]) -> (f64, f64) {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let n = xs.len() as f64;
    let m = xs.iter().map(|x| x - lo).sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - lo - m).powi(2)).sum::<f64>() / n;
    (lo + m, v)
}

impl RewardNormalizer {
    pub fn new(config: NormalizerConfig) -> Self {
        Self {
            config,
            mean: 0.0,
            sq_mean: 0.0,
            initialized: false,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        (self.sq_mean - self.mean * self.mean).max(0.0).sqrt().max(self.config.std_floor)
    }

    /// Sets the state directly; `std` is floored like any other estimate.
    pub fn set_state(&mut self, mean: f64, std: f64) {
        self.mean = mean;
        self.sq_mean = std * std + mean * mean;
        self.initialized = true;
    }

    /// Pure transform with the current statistics; an uninitialized
    /// normalizer uses the batch's own moments.
    pub fn transform(&self, raw: &[f64]) -> Result<IntrinsicBatch> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raw intrinsic error".into()));
        }
        let (mean, std) = if self.initialized || raw.is_empty() {
            (self.mean, self.std())
        } else {
            let (m, v) = shifted_moments(raw);
            (m, v.sqrt().max(self.config.std_floor))
        };
        let clipped: Vec<f64> = raw.iter().map(|&l| ((l - mean) / std).max(0.0)).collect();
        let r_max = clipped.iter().copied().fold(0.0, f64::max);
        let xi = self.config.xi;
        let rewards = clipped
            .iter()
            .map(|&r| {
                if r <= 0.0 || r_max <= 0.0 {
                    0.0
                } else if r == r_max {
                    1.0
                } else {
                    match self.config.sign {
                        ExponentSign::Positive => (r / r_max).powf(xi),
                        ExponentSign::Negative => r.powf(-xi) / r_max.powf(-xi),
                    }
                }
            })
            .collect();
        let n = raw.len().max(1) as f64;
        Ok(IntrinsicBatch {
            raw: raw.to_vec(),
            fraction_clipped: clipped.iter().filter(|&&c| c == 0.0).count() as f64 / n,
            max_raw: raw.iter().copied().fold(0.0, f64::max),
            clipped,
            rewards,
            mean,
            std,
        })
    }

    /// Folds a batch into the EMA state.
    pub fn observe(&mut self, raw: &[f64]) {
        if raw.is_empty() {
            return;
        }
        let (m, v) = shifted_moments(raw);
        let sq = v + m * m;
        if !self.initialized {
            self.mean = m;
            self.sq_mean = sq;
            self.initialized = true;
            return;
        }
        let k = 1.0 - self.config.decay;
        self.mean += k * (m - self.mean);
        self.sq_mean += k * (sq - self.sq_mean);
    }

    /// `transform` followed by `observe`.
    pub fn normalize_batch(&mut self, raw: &[f64]) -> Result<IntrinsicBatch> {
        let out = self.transform(raw)?;
        self.observe(raw);
        Ok(out)
    }
}

/// One-step novelty `‖q(g(f(h(s) ⊕ a, 0)))/‖·‖ − h′(s′)/‖·‖‖²` per row.
///
/// `mode` selects batch (train) or running (eval) statistics for the
/// batch-normalized projector and predictor. No parameters are updated.
pub fn raw_errors<T: Scalar>(
    agent: &Agent<T>,
    obs: &Tensor<T>,
    actions: &Tensor<T>,
    next_obs: &Tensor<T>,
    mode: Mode,
) -> Result<Vec<f64>> {
    let n = obs.rows();
    if actions.rows() != n || next_obs.rows() != n {
        return Err(crate::error::shape_err("raw_errors", "row counts differ"));
    }
    let mut g = Graph::new(mode);
    let src = agent.online_frozen();
    let s = g.constant_ref(obs);
    let z = agent.encode_var(&mut g, src, s)?;
    let a = g.constant_ref(actions);
    let b = g.constant(Tensor::zeros(&[n, agent.config.gru_hidden]));
    let st = agent.step_var(&mut g, src, z, a, b)?;
    let p = agent.predict_var(&mut g, src, st.z)?;
    let p = g.l2_normalize(p, T::of(L2_EPS));
    let s1 = g.constant_ref(next_obs);
    let y = agent.encode_var(&mut g, agent.target_source(), s1)?;
    let y = g.l2_normalize(y, T::of(L2_EPS));
    let d = g.sub(p, y);
    let d2 = g.square(d);
    let e = g.sum_rows(d2);
    g.ensure_finite()?;
    Ok(g.value(e).data().iter().map(|v| v.f64()).collect())
}
