use rand::Rng;

use super::tabular::{evaluate_policy, lookahead_policy, value_iteration_with};
use crate::envs::TabularMdp;
use crate::error::{Error, Result};

/// Error terms of the lookahead performance bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub eps_v: f64,
    pub eps_r: f64,
    pub eps_m: f64,
    pub eps_p: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub r_max: f64,
    pub v_max: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let terms = [self.eps_v, self.eps_r, self.eps_m, self.eps_p, self.r_max, self.v_max];
        if terms.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Invalid("bound inputs must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) || self.horizon == 0 {
            return Err(Error::Invalid("need γ ∈ [0, 1) and H ≥ 1".into()));
        }
        Ok(())
    }

    /// `α_r = ε_r / (1 − γ)`.
    pub fn alpha_r(&self) -> f64 {
        self.eps_r / (1.0 - self.gamma)
    }

    /// `C′ = R_max Σ_{t<H} γ^t t ε_m + γ^H H ε_m V_max`.
    pub fn model_term(&self) -> f64 {
        let g = self.gamma;
        let h = self.horizon as i32;
        let sum: f64 = (0..h).map(|t| g.powi(t) * t as f64 * self.eps_m).sum();
        self.r_max * sum + g.powi(h) * h as f64 * self.eps_m * self.v_max
    }

    /// `2/(1 − γ^H) · [C′ + ε_p/2 + γ^H (ε_v + α_r)]`.
    pub fn rhs(&self) -> f64 {
        let gh = self.gamma.powi(self.horizon as i32);
        2.0 / (1.0 - gh) * (self.model_term() + 0.5 * self.eps_p + gh * (self.eps_v + self.alpha_r()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub inputs: BoundInputs,
    /// `max_s V*(s) − V^{π_H}(s)` under the external reward.
    pub gap: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Exact check of the lookahead bound on a tabular MDP with an exact model
/// and an exact planner (`ε_m = ε_p = 0`).
///
/// `r_i` is the intrinsic reward table; `v_hat` approximates the optimal
/// value under `r + r_i`. The planner scores `h` external-reward steps plus
/// `γ^h v_hat` and acts in receding-horizon fashion.
pub fn check_corollary1(mdp: &TabularMdp, v_hat: &[f64], r_i: &[Vec<f64>], h: usize) -> Result<BoundCheck> {
    let n = mdp.n_states();
    if v_hat.len() != n || r_i.len() != n || r_i.iter().any(|r| r.len() != mdp.n_actions()) {
        return Err(Error::Invalid("value or intrinsic table does not match the MDP".into()));
    }
    let joint: Vec<Vec<f64>> = mdp
        .r
        .iter()
        .zip(r_i)
        .map(|(re, ri)| re.iter().zip(ri).map(|(a, b)| a + b).collect())
        .collect();
    let v_joint = value_iteration_with(mdp, Some(&joint), 1e-13)?.values;
    let v_star = value_iteration_with(mdp, None, 1e-13)?.values;
    let eps_v = v_hat.iter().zip(&v_joint).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let eps_r = r_i.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
    let (policy, _) = lookahead_policy(mdp, &mdp.r, v_hat, h);
    let v_pi = evaluate_policy(mdp, &mdp.r, &policy)?;
    let gap = v_star.iter().zip(&v_pi).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let inputs = BoundInputs {
        eps_v,
        eps_r,
        eps_m: 0.0,
        eps_p: 0.0,
        gamma: mdp.gamma,
        horizon: h,
        r_max: mdp.r.iter().flatten().copied().fold(0.0, f64::max),
        v_max: v_hat.iter().copied().fold(0.0, f64::max),
    };
    let rhs = inputs.rhs();
    Ok(BoundCheck {
        inputs,
        gap,
        rhs,
        holds: gap <= rhs + 1e-9,
    })
}

/// One randomized instance: a random MDP, intrinsic rewards in
/// `[0, eps_r_max]` and a value estimate perturbed by up to `noise`.
pub fn random_bound_instance<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, h: usize, eps_r_max: f64, noise: f64) -> Result<BoundCheck> {
    let gamma = rng.random_range(0.5..0.95);
    let mdp = TabularMdp::random(rng, n_states, n_actions, gamma, 1.0);
    let r_i: Vec<Vec<f64>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random::<f64>() * eps_r_max).collect())
        .collect();
    let joint: Vec<Vec<f64>> = mdp
        .r
        .iter()
        .zip(&r_i)
        .map(|(re, ri)| re.iter().zip(ri).map(|(a, b)| a + b).collect())
        .collect();
    let v_joint = value_iteration_with(&mdp, Some(&joint), 1e-13)?.values;
    let v_hat: Vec<f64> = v_joint.iter().map(|v| v + rng.random_range(-noise..=noise)).collect();
    check_corollary1(&mdp, &v_hat, &r_i, h)
}

#[cfg(test)]
mod tests {
    use super::super::tabular::value_iteration;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_values_give_zero_gap_and_zero_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = TabularMdp::random(&mut rng, 5, 3, 0.9, 1.0);
        let v = value_iteration(&m, 1e-13).unwrap().values;
        let c = check_corollary1(&m, &v, &vec![vec![0.0; 3]; 5], 3).unwrap();
        assert!(c.gap < 1e-9 && c.rhs < 1e-9 && c.holds, "{c:?}");
    }

    #[test]
    fn uniform_shift_leaves_the_plan_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = TabularMdp::random(&mut rng, 6, 4, 0.8, 1.0);
        let v: Vec<f64> = value_iteration(&m, 1e-13).unwrap().values.iter().map(|x| x + 3.0).collect();
        let c = check_corollary1(&m, &v, &vec![vec![0.0; 4]; 6], 2).unwrap();
        assert!(c.gap < 1e-9 && c.rhs > 0.0 && c.holds);
    }

    #[test]
    fn rhs_formula() {
        let b = BoundInputs {
            eps_v: 0.1,
            eps_r: 0.05,
            eps_m: 0.0,
            eps_p: 0.0,
            gamma: 0.5,
            horizon: 2,
            r_max: 1.0,
            v_max: 2.0,
        };
        assert!((b.alpha_r() - 0.1).abs() < 1e-15);
        assert!((b.rhs() - 2.0 / 0.75 * 0.25 * 0.2).abs() < 1e-15);
        let m = BoundInputs { eps_m: 0.1, ..b };
        // Σ_{t<2} γ^t t ε_m = 0.05, γ² · 2 · 0.1 · 2 = 0.1.
        assert!((m.model_term() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn randomized_instances_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..200 {
            let c = random_bound_instance(&mut rng, 6, 3, 1 + i % 4, 0.2, 0.5).unwrap();
            assert!(c.holds, "instance {i}: {c:?}");
        }
    }
}
