use nalgebra::{DMatrix, DVector};

use crate::envs::TabularMdp;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ValueIteration {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    /// Sup-norm Bellman residual after each sweep.
    pub residuals: Vec<f64>,
}

/// `r(s, a) + γ Σ p(s′|s, a) v(s′)` for every pair.
pub fn q_from_values(mdp: &TabularMdp, rewards: &[Vec<f64>], v: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| rewards[s][a] + mdp.gamma * mdp.p[s][a].iter().zip(v).map(|(p, x)| p * x).sum::<f64>())
                .collect()
        })
        .collect()
}

/// First index of the maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// One Bellman optimality backup of `v`.
pub fn bellman_backup(mdp: &TabularMdp, rewards: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    q_from_values(mdp, rewards, v)
        .iter()
        .map(|q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Value iteration on `rewards` (the MDP's own table when `None`) until
/// the sup-norm residual drops below `tol`.
pub fn value_iteration_with(mdp: &TabularMdp, rewards: Option<&[Vec<f64>]>, tol: f64) -> Result<ValueIteration> {
    mdp.validate()?;
    let rewards = rewards.unwrap_or(&mdp.r);
    let mut v = vec![0.0; mdp.n_states()];
    let mut residuals = Vec::new();
    // γ-contraction from v = 0 needs about log(tol / r_max) / log γ sweeps.
    let cap = 100_000;
    loop {
        let next = bellman_backup(mdp, rewards, &v);
        let res = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        residuals.push(res);
        if res < tol {
            break;
        }
        if residuals.len() >= cap {
            return Err(Error::Invalid(format!("value iteration did not reach {tol} in {cap} sweeps")));
        }
    }
    let policy = q_from_values(mdp, rewards, &v).iter().map(|q| argmax(q)).collect();
    Ok(ValueIteration {
        values: v,
        policy,
        residuals,
    })
}

pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<ValueIteration> {
    value_iteration_with(mdp, None, tol)
}

/// Exact `V^π` for a stationary deterministic policy: solves
/// `(I − γ P_π) v = r_π`.
pub fn evaluate_policy(mdp: &TabularMdp, rewards: &[Vec<f64>], policy: &[usize]) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    if policy.len() != n || policy.iter().any(|&a| a >= mdp.n_actions()) {
        return Err(Error::Invalid("policy does not match the MDP".into()));
    }
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let a = policy[s];
        b[s] = rewards[s][a];
        for (t, &p) in mdp.p[s][a].iter().enumerate() {
            m[(s, t)] -= mdp.gamma * p;
        }
    }
    let x = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Invalid("policy evaluation system is singular".into()))?;
    Ok(x.iter().copied().collect())
}

/// Receding-horizon lookahead policy: in every state, the first action of an
/// optimal closed-loop `h`-step plan scored by `rewards` plus `γ^h · terminal`.
/// Returns the policy and the `h`-step values `T^h terminal`.
pub fn lookahead_policy(mdp: &TabularMdp, rewards: &[Vec<f64>], terminal: &[f64], h: usize) -> (Vec<usize>, Vec<f64>) {
    assert!(h >= 1, "lookahead horizon must be at least 1");
    let mut v = terminal.to_vec();
    for _ in 0..h - 1 {
        v = bellman_backup(mdp, rewards, &v);
    }
    let q = q_from_values(mdp, rewards, &v);
    let policy = q.iter().map(|row| argmax(row)).collect();
    let values = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    (policy, values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExhaustivePlan {
    pub actions: Vec<usize>,
    pub value: f64,
}

/// Best open-loop action sequence from the state distribution `start`,
/// scored as `Σ_{t<h} γ^t E[r] + γ^h E[terminal(s_h)]`, by enumeration.
/// Ties go to the lexicographically smallest sequence.
pub fn exhaustive_plan(mdp: &TabularMdp, start: &[f64], h: usize, terminal: &[f64]) -> Result<ExhaustivePlan> {
    let na = mdp.n_actions();
    let count = (na as u128).checked_pow(h as u32).unwrap_or(u128::MAX);
    if count > 1_000_000 {
        return Err(Error::Budget(count));
    }
    let mut best = ExhaustivePlan {
        actions: Vec::new(),
        value: f64::NEG_INFINITY,
    };
    let mut seq = Vec::with_capacity(h);
    fn go(
        mdp: &TabularMdp,
        dist: &[f64],
        disc: f64,
        acc: f64,
        h: usize,
        terminal: &[f64],
        seq: &mut Vec<usize>,
        best: &mut ExhaustivePlan,
    ) {
        if seq.len() == h {
            let v = acc + disc * dist.iter().zip(terminal).map(|(p, t)| p * t).sum::<f64>();
            if v > best.value {
                best.value = v;
                best.actions = seq.clone();
            }
            return;
        }
        for a in 0..mdp.n_actions() {
            let (next, r) = mdp.propagate(dist, a);
            seq.push(a);
            go(mdp, &next, disc * mdp.gamma, acc + disc * r, h, terminal, seq, best);
            seq.pop();
        }
    }
    go(mdp, start, 1.0, 0.0, h, terminal, &mut seq, &mut best);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain() -> TabularMdp {
        // 0 → 1 → 1, r = [0, 1], one action.
        TabularMdp::new(vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]], vec![vec![0.0], vec![1.0]], 0.5).unwrap()
    }

    #[test]
    fn geometric_series_fixtures() {
        let vi = value_iteration(&chain(), 1e-14).unwrap();
        assert!((vi.values[1] - 2.0).abs() < 1e-12);
        assert!((vi.values[0] - 1.0).abs() < 1e-12);
        let absorbing = TabularMdp::new(vec![vec![vec![1.0]]], vec![vec![1.0]], 0.9).unwrap();
        let v = value_iteration(&absorbing, 1e-13).unwrap().values[0];
        assert!((v - 10.0).abs() < 1e-11);
        let zero = TabularMdp::new(vec![vec![vec![0.5, 0.5]; 2]; 2], vec![vec![0.0; 2]; 2], 0.99).unwrap();
        assert!(value_iteration(&zero, 1e-12).unwrap().values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn residuals_contract_and_fixed_point_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let m = TabularMdp::random(&mut rng, 8, 4, 0.9, 1.0);
            let vi = value_iteration(&m, 1e-11).unwrap();
            for w in vi.residuals.windows(2) {
                assert!(w[1] <= w[0] * m.gamma + 1e-13, "{w:?}");
            }
            let back = bellman_backup(&m, &m.r, &vi.values);
            let res = back.iter().zip(&vi.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(res < 1e-10);
            let exact = evaluate_policy(&m, &m.r, &vi.policy).unwrap();
            for (a, b) in exact.iter().zip(&vi.values) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn exhaustive_plan_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = TabularMdp::random(&mut rng, 4, 3, 0.0, 1.0);
        let start = [0.0, 0.0, 1.0, 0.0];
        let p = exhaustive_plan(&m, &start, 2, &[0.0; 4]).unwrap();
        assert_eq!(p.actions[0], argmax(&m.r[2]));
        assert_eq!(p.value, m.r[2][p.actions[0]]);
        let m = TabularMdp::random(&mut rng, 4, 3, 0.9, 1.0);
        let terminal = [1.0, 2.0, 0.5, 0.0];
        let p = exhaustive_plan(&m, &start, 1, &terminal).unwrap();
        let q = q_from_values(&m, &m.r, &terminal);
        assert_eq!(p.actions, vec![argmax(&q[2])]);
        assert!((p.value - q[2][p.actions[0]]).abs() < 1e-12);
        assert!(matches!(exhaustive_plan(&m, &start, 13, &terminal), Err(Error::Budget(_))));
    }

    #[test]
    fn lookahead_with_optimal_terminal_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = TabularMdp::random(&mut rng, 6, 3, 0.8, 1.0);
            let vi = value_iteration(&m, 1e-13).unwrap();
            for h in 1..4 {
                let (pi, v) = lookahead_policy(&m, &m.r, &vi.values, h);
                let vp = evaluate_policy(&m, &m.r, &pi).unwrap();
                for s in 0..6 {
                    assert!((vp[s] - vi.values[s]).abs() < 1e-9);
                    assert!((v[s] - vi.values[s]).abs() < 1e-9);
                }
            }
        }
    }
}
