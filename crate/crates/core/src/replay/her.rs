use rand::Rng;

use super::buffer::{Episode, ReplayBuffer};
use crate::error::Result;

/// Goal structure of a goal-conditioned observation.
pub trait GoalSpec {
    fn achieved_goal(&self, obs: &[f64]) -> Vec<f64>;
    /// `obs` with its desired-goal part replaced by `goal`.
    fn substitute_goal(&self, obs: &[f64], goal: &[f64]) -> Vec<f64>;
    fn goal_reward(&self, achieved: &[f64], goal: &[f64]) -> f64;
}

/// Hindsight copies of every segment of `episode` under `k` goals drawn from
/// states achieved later in the same episode ("future" strategy).
///
/// Each copy keeps its goal fixed across the segment, so the stored
/// observation stream stays consistent with the environment's dynamics.
/// Rewards are recomputed from the goal predicate on each next state.
pub fn relabel<R: Rng>(
    episode: &Episode,
    segment_len: usize,
    k: usize,
    spec: &dyn GoalSpec,
    rng: &mut R,
) -> Result<Vec<Episode>> {
    episode.validate()?;
    let ep = episode.clone().padded(segment_len);
    let last = ep.obs.len() - 1;
    let mut out = Vec::new();
    if k == 0 {
        return Ok(out);
    }
    for start in 0..=ep.len() - segment_len {
        for _ in 0..k {
            let f = rng.random_range(start + 1..=last);
            let goal = spec.achieved_goal(&ep.obs[f]);
            let seg = ep.segment(start, segment_len);
            let obs: Vec<Vec<f64>> = seg.obs.iter().map(|o| spec.substitute_goal(o, &goal)).collect();
            let rewards = seg.obs[1..]
                .iter()
                .map(|o| spec.goal_reward(&spec.achieved_goal(o), &goal))
                .collect();
            out.push(Episode {
                obs,
                actions: seg.actions,
                rewards,
                dones: seg.dones,
            });
        }
    }
    Ok(out)
}

impl ReplayBuffer {
    /// Stores `episode` and, when a goal spec is given, its hindsight copies.
    /// Returns the number of relabeled segments added.
    pub fn push_with_her<R: Rng>(
        &mut self,
        episode: Episode,
        k: usize,
        spec: Option<&dyn GoalSpec>,
        rng: &mut R,
    ) -> Result<usize> {
        let copies = match spec {
            Some(s) if k > 0 => relabel(&episode, self.config().segment_len, k, s, rng)?,
            _ => Vec::new(),
        };
        self.push_episode(episode)?;
        let n = copies.len();
        for c in copies {
            self.push(c, true)?;
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::super::ReplayConfig;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// obs = [x, goal]; reached when |x − goal| < 0.25.
    struct Line;

    impl GoalSpec for Line {
        fn achieved_goal(&self, obs: &[f64]) -> Vec<f64> {
            vec![obs[0]]
        }
        fn substitute_goal(&self, obs: &[f64], goal: &[f64]) -> Vec<f64> {
            vec![obs[0], goal[0]]
        }
        fn goal_reward(&self, a: &[f64], g: &[f64]) -> f64 {
            f64::from((a[0] - g[0]).abs() < 0.25)
        }
    }

    fn walk(n: usize, goal: f64) -> Episode {
        let mut e = Episode::new(vec![0.0, goal]);
        for t in 1..=n {
            let x = t as f64;
            e.push(vec![1.0], Line.goal_reward(&[x], &[goal]), vec![x, goal], false);
        }
        e
    }

    #[test]
    fn rewards_follow_the_predicate_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let copies = relabel(&walk(8, 100.0), 3, 4, &Line, &mut rng).unwrap();
        assert_eq!(copies.len(), 6 * 4);
        for c in &copies {
            let g = c.obs[0][1];
            assert!(c.obs.iter().all(|o| o[1] == g));
            for (t, r) in c.rewards.iter().enumerate() {
                assert_eq!(*r, Line.goal_reward(&Line.achieved_goal(&c.obs[t + 1]), &[g]));
            }
        }
        assert!(copies.iter().any(|c| c.rewards.contains(&1.0)));
    }

    #[test]
    fn own_next_state_goal_rewards_that_transition() {
        let e = walk(1, 50.0);
        let copies = relabel(&e, 1, 3, &Line, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(copies.iter().all(|c| c.rewards == vec![1.0]));
    }

    #[test]
    fn zero_k_or_no_spec_matches_plain_storage() {
        let cfg = ReplayConfig {
            segment_len: 3,
            capacity: 64,
            ..Default::default()
        };
        let mut a = ReplayBuffer::new(cfg.clone()).unwrap();
        let mut b = ReplayBuffer::new(cfg.clone()).unwrap();
        let mut c = ReplayBuffer::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        a.push_episode(walk(6, 3.0)).unwrap();
        assert_eq!(b.push_with_her(walk(6, 3.0), 0, Some(&Line), &mut rng).unwrap(), 0);
        assert_eq!(c.push_with_her(walk(6, 3.0), 4, None, &mut rng).unwrap(), 0);
        for slot in 0..64 {
            assert_eq!(a.segment_at(slot), b.segment_at(slot));
            assert_eq!(a.segment_at(slot), c.segment_at(slot));
        }
    }

    #[test]
    fn originals_are_stored_unchanged() {
        let mut buf = ReplayBuffer::new(ReplayConfig {
            segment_len: 2,
            capacity: 64,
            ..Default::default()
        })
        .unwrap();
        let e = walk(4, 2.0);
        let n = buf.push_with_her(e.clone(), 2, Some(&Line), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(n, 6);
        assert_eq!(buf.stats().relabeled_segments, 6);
        for start in 0..3 {
            let s = buf.segment_at(start).unwrap();
            assert_eq!(s.rewards, e.rewards[start..start + 2].to_vec());
        }
    }
}
