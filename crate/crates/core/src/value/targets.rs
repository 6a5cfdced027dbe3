//! Pure target arithmetic over the values of one segment.
//!
//! Positions are relative to the segment start `t`. `rewards[n]` and
//! `dones[n]` describe transition `n`; `bootstrap[j]` is the target value of
//! state `j` for `j = 0 ..= end`, where `end` caps every forward horizon.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueTargetConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub c_r: f64,
    pub rho: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for ValueTargetConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.8,
            horizon: 6,
            c_r: 0.5,
            rho: 0.5,
            c1: 1.0,
            c2: 0.5,
            c3: 0.1,
        }
    }
}

impl ValueTargetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("discount must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if [self.c_r, self.rho, self.c1, self.c2, self.c3].iter().any(|&c| !(c >= 0.0)) {
            return bad("loss coefficients must be non-negative");
        }
        Ok(())
    }
}

/// Weights on `Q¹ … Q^H`: `(1−λ)λ^(k−1)` for `k < H`, `λ^(H−1)` for `k = H`.
pub fn lambda_weights(lambda: f64, horizon: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (1..horizon).map(|k| (1.0 - lambda) * lambda.powi(k as i32 - 1)).collect();
    w.push(lambda.powi(horizon as i32 - 1));
    w
}

/// `Σ_{n=i}^{j−1} γ^(n−i) r_n + γ^(j−i) V(s_j)` with `j = min(i+k, end)`.
///
/// A done flag at transition `n < j` ends the sum after `r_n` and drops the
/// bootstrap.
pub fn qk_target(rewards: &[f64], dones: &[bool], bootstrap: &[f64], gamma: f64, end: usize, i: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if i > end || end >= bootstrap.len() || end > rewards.len() || dones.len() != rewards.len() {
        return Err(Error::OutOfRange {
            index: i,
            len: end.min(bootstrap.len().saturating_sub(1)),
        });
    }
    let j = (i + k).min(end);
    let mut acc = 0.0;
    let mut disc = 1.0;
    for n in i..j {
        acc += disc * rewards[n];
        disc *= gamma;
        if dones[n] {
            return Ok(acc);
        }
    }
    // Transition i may already sit past a terminal state (padding).
    if (0..i).any(|n| dones[n]) {
        return Ok(acc);
    }
    Ok(acc + disc * bootstrap[j])
}

/// λ-weighted mixture of `Q¹ … Q^H` at position `i`.
#[allow(clippy::too_many_arguments)]
pub fn qlambda_target(
    rewards: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    gamma: f64,
    lambda: f64,
    horizon: usize,
    end: usize,
    i: usize,
) -> Result<f64> {
    let w = lambda_weights(lambda, horizon);
    let mut total = 0.0;
    for (k, wk) in (1..=horizon).zip(w) {
        if wk == 0.0 {
            continue;
        }
        total += wk * qk_target(rewards, dones, bootstrap, gamma, end, i, k)?;
    }
    Ok(total)
}

/// `Σ_i ρ^i · loss_i`, with `0⁰ = 1`.
pub fn rho_weighted_sum(per_step: &[f64], rho: f64) -> f64 {
    let mut w = 1.0;
    let mut s = 0.0;
    for &l in per_step {
        s += w * l;
        w *= rho;
    }
    s
}

/// `(1/H) Σ_i (q_i − target_i)²`.
pub fn lambda_loss(q: &[f64], targets: &[f64], horizon: usize) -> f64 {
    q.iter().zip(targets).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / horizon as f64
}

/// Model-rollout `H`-step Bellman error:
/// `(1/H) Σ_{t<H} [q_t − (Σ_{k=t}^{H−1} γ^(k−t) r̂_k + γ^H q_H)]²`.
pub fn tdk_loss(q: &[f64], r_hat: &[f64], q_terminal: f64, gamma: f64) -> f64 {
    let h = q.len();
    tdk_targets(r_hat, q_terminal, gamma)
        .iter()
        .zip(q)
        .map(|(y, q)| (q - y).powi(2))
        .sum::<f64>()
        / h as f64
}

pub fn tdk_targets(r_hat: &[f64], q_terminal: f64, gamma: f64) -> Vec<f64> {
    let h = r_hat.len();
    let tail = gamma.powi(h as i32) * q_terminal;
    (0..h)
        .map(|t| {
            let mut acc = 0.0;
            let mut d = 1.0;
            for &r in &r_hat[t..] {
                acc += d * r;
                d *= gamma;
            }
            acc + tail
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_two_step_target() {
        let q = qk_target(&[1.0, 1.0], &[false, false], &[0.0, 0.0, 4.0], 0.5, 2, 0, 2).unwrap();
        assert_eq!(q, 2.5);
    }

    #[test]
    fn single_step_and_zero_discount() {
        let q = qk_target(&[0.0, 0.0], &[false, false], &[0.0, 3.0, 9.0], 0.7, 2, 0, 1).unwrap();
        assert!((q - 0.7 * 3.0).abs() < 1e-15);
        for k in 1..=3 {
            let q = qk_target(&[2.0, 5.0, 1.0], &[false; 3], &[7.0; 4], 0.0, 3, 0, k).unwrap();
            assert_eq!(q, 2.0);
        }
    }

    #[test]
    fn horizon_is_capped_at_segment_end() {
        let r = [1.0, 2.0, 3.0];
        let v = [10.0, 20.0, 30.0, 40.0];
        let a = qk_target(&r, &[false; 3], &v, 0.9, 2, 1, 5).unwrap();
        let b = qk_target(&r, &[false; 3], &v, 0.9, 2, 1, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(qk_target(&r, &[false; 3], &v, 0.9, 2, 2, 3).unwrap(), 30.0);
        assert!(qk_target(&r, &[false; 3], &v, 0.9, 2, 3, 1).is_err());
        assert!(qk_target(&r, &[false; 3], &v, 0.9, 2, 0, 0).is_err());
    }

    #[test]
    fn done_flag_drops_the_bootstrap() {
        let q = qk_target(&[1.0, 1.0, 1.0], &[false, true, false], &[100.0; 4], 0.5, 3, 0, 3).unwrap();
        assert_eq!(q, 1.5);
        let after = qk_target(&[1.0, 1.0, 0.0], &[false, true, true], &[100.0; 4], 0.5, 3, 2, 1).unwrap();
        assert_eq!(after, 0.0);
    }

    #[test]
    fn lambda_extremes_and_three_step_weights() {
        assert_eq!(lambda_weights(0.5, 3), vec![0.5, 0.25, 0.25]);
        let r = [0.3, -0.2, 0.9];
        let v = [1.0, 2.0, -1.0, 0.5];
        let q1 = qk_target(&r, &[false; 3], &v, 0.9, 3, 0, 1).unwrap();
        let q3 = qk_target(&r, &[false; 3], &v, 0.9, 3, 0, 3).unwrap();
        assert_eq!(qlambda_target(&r, &[false; 3], &v, 0.9, 0.0, 3, 3, 0).unwrap(), q1);
        assert_eq!(qlambda_target(&r, &[false; 3], &v, 0.9, 1.0, 3, 3, 0).unwrap(), q3);
    }

    #[test]
    fn rho_weighting() {
        assert_eq!(rho_weighted_sum(&[1.0, 1.0, 1.0], 0.5), 1.75);
        assert_eq!(rho_weighted_sum(&[2.0, 5.0, 7.0], 0.0), 2.0);
        assert_eq!(rho_weighted_sum(&[0.0; 4], 0.3), 0.0);
    }

    #[test]
    fn lambda_loss_arithmetic() {
        assert_eq!(lambda_loss(&[1.0, 2.0], &[1.0, 2.0], 2), 0.0);
        assert_eq!(lambda_loss(&[3.0], &[1.0], 4), 1.0);
        let base = lambda_loss(&[1.0, -1.0], &[0.5, 0.0], 2);
        assert!((lambda_loss(&[1.5, -2.0], &[0.5, 0.0], 2) - 4.0 * base).abs() < 1e-15);
    }

    #[test]
    fn tdk_reduces_to_one_step_bellman_and_matches_lambda_zero() {
        let (q0, r0, qt, g) = (1.3, 0.4, 2.0, 0.9);
        assert!((tdk_loss(&[q0], &[r0], qt, g) - (q0 - (r0 + g * qt)).powi(2)).abs() < 1e-15);
        let y = qlambda_target(&[r0], &[false], &[0.0, qt], g, 0.0, 1, 1, 0).unwrap();
        assert_eq!(tdk_targets(&[r0], qt, g)[0], y);
        // A critic that already satisfies the targets has zero error.
        let t = tdk_targets(&[1.0, 0.5, 0.25], 3.0, 0.8);
        assert_eq!(tdk_loss(&t, &[1.0, 0.5, 0.25], 3.0, 0.8), 0.0);
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(lambda in 0.0f64..=1.0, h in 1usize..64) {
            let s: f64 = lambda_weights(lambda, h).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn qlambda_is_monotone_in_rewards(
            r in prop::collection::vec(-1.0f64..1.0, 4),
            bump in 0.0f64..2.0,
            at in 0usize..4,
            lambda in 0.0f64..=1.0,
        ) {
            let v = [0.5, -0.5, 1.0, 0.0, 2.0];
            let base = qlambda_target(&r, &[false; 4], &v, 0.9, lambda, 4, 4, 0).unwrap();
            let mut r2 = r.clone();
            r2[at] += bump;
            let up = qlambda_target(&r2, &[false; 4], &v, 0.9, lambda, 4, 4, 0).unwrap();
            prop_assert!(up >= base - 1e-12);
        }
    }
}
