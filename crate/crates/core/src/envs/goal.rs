use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_action, Env, Step};
use crate::replay::GoalSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardMode {
    /// 1 while within tolerance of the goal, else 0.
    Sparse,
    /// Negative distance to the goal divided by the arena diagonal.
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalTaskConfig {
    /// Side of the square arena, in cell widths.
    pub arena: f64,
    pub tolerance: f64,
    pub max_speed: f64,
    /// Fraction of the old velocity kept per step.
    pub inertia: f64,
    pub dt: f64,
    /// Minimum start-to-goal distance at reset.
    pub min_goal_distance: f64,
    pub reward: RewardMode,
}

impl Default for GoalTaskConfig {
    fn default() -> Self {
        Self {
            arena: 4.0,
            tolerance: 0.5,
            max_speed: 2.0,
            inertia: 0.5,
            dt: 0.1,
            min_goal_distance: 2.0,
            reward: RewardMode::Sparse,
        }
    }
}

/// Point mass with first-order velocity lag in a walled square.
///
/// Observation: `[pos, vel, goal]`, positions scaled to `[-1, 1]`,
/// velocity by `max_speed`.
#[derive(Clone, Debug)]
pub struct GoalTask {
    pub config: GoalTaskConfig,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    reached: bool,
    rng: ChaCha8Rng,
    warned: u32,
}

impl GoalTask {
    pub fn new(config: GoalTaskConfig, seed: u64) -> Self {
        let mut t = Self {
            config,
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            reached: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            warned: 0,
        };
        t.reset();
        t
    }

    fn scale(&self, p: f64) -> f64 {
        2.0 * p / self.config.arena - 1.0
    }

    fn unscale(&self, o: f64) -> f64 {
        (o + 1.0) * 0.5 * self.config.arena
    }

    pub fn observe(&self) -> Vec<f64> {
        let v = self.config.max_speed;
        vec![
            self.scale(self.pos[0]),
            self.scale(self.pos[1]),
            self.vel[0] / v,
            self.vel[1] / v,
            self.scale(self.goal[0]),
            self.scale(self.goal[1]),
        ]
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2], goal: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.goal = goal;
        self.reached = self.at_goal();
    }

    fn at_goal(&self) -> bool {
        self.distance(self.pos, self.goal) < self.config.tolerance
    }

    fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    fn reward_for(&self, pos: [f64; 2], goal: [f64; 2]) -> f64 {
        let d = self.distance(pos, goal);
        match self.config.reward {
            RewardMode::Sparse => f64::from(d < self.config.tolerance),
            RewardMode::Dense => -d / (self.config.arena * 2f64.sqrt()),
        }
    }
}

impl Env for GoalTask {
    fn id(&self) -> String {
        match self.config.reward {
            RewardMode::Sparse => "pointmass-sparse".into(),
            RewardMode::Dense => "pointmass-dense".into(),
        }
    }
    fn obs_dim(&self) -> usize {
        6
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn reset(&mut self) -> Vec<f64> {
        let a = self.config.arena;
        let margin = 0.25 * a;
        self.pos = [
            self.rng.random_range(margin..a - margin),
            self.rng.random_range(margin..a - margin),
        ];
        self.vel = [0.0; 2];
        loop {
            let g = [self.rng.random_range(0.0..a), self.rng.random_range(0.0..a)];
            if self.distance(g, self.pos) >= self.config.min_goal_distance {
                self.goal = g;
                break;
            }
        }
        self.reached = false;
        self.observe()
    }
    fn step(&mut self, action: &[f64]) -> Step {
        let u = clip_action(action, &mut self.warned);
        let c = &self.config;
        for i in 0..2 {
            self.vel[i] = c.inertia * self.vel[i] + (1.0 - c.inertia) * c.max_speed * u[i];
            let p = self.pos[i] + c.dt * self.vel[i];
            if p < 0.0 || p > c.arena {
                self.vel[i] = 0.0;
            }
            self.pos[i] = p.clamp(0.0, c.arena);
        }
        let reward = self.reward_for(self.pos, self.goal);
        self.reached |= self.at_goal();
        Step {
            obs: self.observe(),
            reward,
            done: false,
            truncated: false,
        }
    }
    fn success(&self) -> bool {
        self.reached
    }
}

impl GoalSpec for GoalTask {
    fn achieved_goal(&self, obs: &[f64]) -> Vec<f64> {
        obs[..2].to_vec()
    }
    fn substitute_goal(&self, obs: &[f64], goal: &[f64]) -> Vec<f64> {
        let mut o = obs.to_vec();
        o[4..6].copy_from_slice(goal);
        o
    }
    fn goal_reward(&self, achieved: &[f64], goal: &[f64]) -> f64 {
        let p = [self.unscale(achieved[0]), self.unscale(achieved[1])];
        let g = [self.unscale(goal[0]), self.unscale(goal[1])];
        self.reward_for(p, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_one_at_the_goal() {
        let mut t = GoalTask::new(GoalTaskConfig::default(), 0);
        t.set_state([1.0, 1.0], [0.0, 0.0], [1.1, 1.0]);
        let s = t.step(&[0.0, 0.0]);
        assert_eq!(s.reward, 1.0);
        assert!(t.success());
        t.set_state([1.0, 1.0], [0.0, 0.0], [3.0, 3.0]);
        assert_eq!(t.step(&[0.0, 0.0]).reward, 0.0);
    }

    #[test]
    fn relabel_predicate_agrees_with_env_reward() {
        let mut t = GoalTask::new(GoalTaskConfig::default(), 3);
        for _ in 0..50 {
            let s = t.step(&[0.7, -0.2]);
            let ag = t.achieved_goal(&s.obs);
            assert_eq!(t.goal_reward(&ag, &s.obs[4..6]), s.reward);
        }
    }

    #[test]
    fn seeded_resets_repeat() {
        let mut a = GoalTask::new(GoalTaskConfig::default(), 11);
        let mut b = GoalTask::new(GoalTaskConfig::default(), 11);
        for _ in 0..5 {
            let (oa, ob) = (a.reset(), b.reset());
            assert_eq!(oa, ob);
            let g = a.goal();
            assert!(((oa[0] - oa[4]).powi(2) + (oa[1] - oa[5]).powi(2)).sqrt() * 2.0 >= 2.0 - 1e-9, "{g:?}");
        }
    }

    #[test]
    fn dense_reward_is_bounded_and_stays_in_arena() {
        let mut t = GoalTask::new(
            GoalTaskConfig {
                reward: RewardMode::Dense,
                ..Default::default()
            },
            5,
        );
        for i in 0..200 {
            let s = t.step(&[if i < 100 { 1.0 } else { -1.0 }, 0.3]);
            assert!((-1.0..=0.0).contains(&s.reward));
            assert!(s.obs[..2].iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }
}
