use rand::Rng;

use crate::error::{Error, Result};
use crate::planner::PlanningModel;

/// Finite MDP with `p[s][a][s']` transitions and `r[s][a]` rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(p: Vec<Vec<Vec<f64>>>, r: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        let m = Self { p, r, gamma };
        m.validate()?;
        Ok(m)
    }

    pub fn n_states(&self) -> usize {
        self.p.len()
    }

    pub fn n_actions(&self) -> usize {
        self.p.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states(), self.n_actions());
        if ns == 0 || na == 0 {
            return Err(Error::Invalid("MDP needs at least one state and action".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Invalid("discount must lie in [0, 1)".into()));
        }
        if self.r.len() != ns || self.r.iter().any(|row| row.len() != na) {
            return Err(Error::Invalid("reward table shape does not match".into()));
        }
        for (s, rows) in self.p.iter().enumerate() {
            if rows.len() != na {
                return Err(Error::Invalid(format!("state {s} has {} actions", rows.len())));
            }
            for (a, row) in rows.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != ns || row.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::Invalid(format!("transition row ({s}, {a}) is not a distribution")));
                }
            }
        }
        Ok(())
    }

    /// Dirichlet(1) transition rows and uniform rewards in `[0, r_max]`.
    pub fn random<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64, r_max: f64) -> Self {
        let row = |rng: &mut R| {
            let mut v: Vec<f64> = (0..n_states).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            let err = 1.0 - v.iter().sum::<f64>();
            v[0] += err;
            v
        };
        let p = (0..n_states)
            .map(|_| (0..n_actions).map(|_| row(rng)).collect())
            .collect();
        let r = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.random::<f64>() * r_max).collect())
            .collect();
        Self { p, r, gamma }
    }

    /// Expected one-step reward and next-state distribution from `dist`.
    pub fn propagate(&self, dist: &[f64], a: usize) -> (Vec<f64>, f64) {
        let ns = self.n_states();
        let mut next = vec![0.0; ns];
        let mut r = 0.0;
        for (s, &w) in dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            r += w * self.r[s][a];
            for (n, &p) in next.iter_mut().zip(&self.p[s][a]) {
                *n += w * p;
            }
        }
        (next, r)
    }
}

/// Maps a continuous action in `[-1, 1]` onto one of `n` bins.
pub fn action_bin(a: f64, n: usize) -> usize {
    let b = ((a + 1.0) / 2.0 * n as f64).floor();
    (b.max(0.0) as usize).min(n - 1)
}

/// An MDP seen through the planner interface: states are distributions,
/// the single continuous action selects a bin, rewards are expectations.
/// Open-loop enumeration over this model is the exact planning oracle.
#[derive(Clone, Debug)]
pub struct TabularPlanner<'a> {
    pub mdp: &'a TabularMdp,
    pub terminal: Vec<f64>,
}

impl<'a> TabularPlanner<'a> {
    pub fn new(mdp: &'a TabularMdp, terminal: Vec<f64>) -> Self {
        Self { mdp, terminal }
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut d = vec![0.0; self.mdp.n_states()];
        d[s] = 1.0;
        d
    }

    /// Centre of bin `a` in `[-1, 1]`.
    pub fn bin_center(&self, a: usize) -> f64 {
        let n = self.mdp.n_actions() as f64;
        -1.0 + (2.0 * a as f64 + 1.0) / n
    }
}

impl PlanningModel for TabularPlanner<'_> {
    type State = Vec<Vec<f64>>;

    fn action_dim(&self) -> usize {
        1
    }
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0], vec![1.0])
    }
    fn broadcast(&self, root: &Self::State, n: usize) -> Result<Self::State> {
        let d = root
            .first()
            .ok_or_else(|| Error::Invalid("empty root distribution".into()))?;
        Ok(vec![d.clone(); n])
    }
    fn step(&self, states: &Self::State, actions: &[f64]) -> Result<(Self::State, Vec<f64>)> {
        if actions.len() != states.len() {
            return Err(Error::Invalid("one action per state expected".into()));
        }
        let na = self.mdp.n_actions();
        Ok(states
            .iter()
            .zip(actions)
            .map(|(d, &a)| self.mdp.propagate(d, action_bin(a, na)))
            .unzip())
    }
    fn terminal_value(&self, states: &Self::State) -> Result<Vec<f64>> {
        Ok(states
            .iter()
            .map(|d| d.iter().zip(&self.terminal).map(|(p, v)| p * v).sum())
            .collect())
    }
    /// Greedy on expected immediate reward.
    fn policy(&self, states: &Self::State) -> Result<Vec<f64>> {
        let na = self.mdp.n_actions();
        Ok(states
            .iter()
            .map(|d| {
                let best = (0..na)
                    .map(|a| (a, self.mdp.propagate(d, a).1))
                    .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                self.bin_center(best.0)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let m = TabularMdp::random(&mut rng, 16, 5, 0.9, 1.0);
            m.validate().unwrap();
        }
    }

    #[test]
    fn bins_cover_the_box() {
        assert_eq!(action_bin(-1.0, 5), 0);
        assert_eq!(action_bin(1.0, 5), 4);
        assert_eq!(action_bin(-0.2, 5), 2);
        assert_eq!(action_bin(-0.2000001, 5), 1);
        let m = TabularMdp::random(&mut ChaCha8Rng::seed_from_u64(1), 3, 4, 0.5, 1.0);
        let tp = TabularPlanner::new(&m, vec![0.0; 3]);
        for a in 0..4 {
            assert_eq!(action_bin(tp.bin_center(a), 4), a);
        }
    }

    #[test]
    fn planner_view_propagates_expectations() {
        let m = TabularMdp::new(
            vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.5, 0.5]]],
            vec![vec![0.0, 2.0], vec![1.0, 3.0]],
            0.9,
        )
        .unwrap();
        let tp = TabularPlanner::new(&m, vec![10.0, 20.0]);
        let root = vec![tp.one_hot(0)];
        let s = tp.broadcast(&root, 2).unwrap();
        let (next, r) = tp.step(&s, &[-0.9, 0.9]).unwrap();
        assert_eq!(r, vec![0.0, 2.0]);
        assert_eq!(next, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(tp.terminal_value(&next).unwrap(), vec![20.0, 10.0]);
        assert_eq!(tp.policy(&root).unwrap(), vec![0.5]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(TabularMdp::new(vec![vec![vec![0.5, 0.4], vec![1.0, 0.0]]; 2], vec![vec![0.0; 2]; 2], 0.9).is_err());
        assert!(TabularMdp::new(vec![vec![vec![1.0]]], vec![vec![0.0]], 1.0).is_err());
    }
}
