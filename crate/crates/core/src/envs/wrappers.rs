use super::{Env, Step};

/// Repeats each action `repeat` times and sums the rewards.
#[derive(Clone, Debug)]
pub struct ActionRepeat<E> {
    pub inner: E,
    pub repeat: usize,
}

impl<E: Env> ActionRepeat<E> {
    pub fn new(inner: E, repeat: usize) -> Self {
        Self {
            inner,
            repeat: repeat.max(1),
        }
    }
}

impl<E: Env> Env for ActionRepeat<E> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }
    fn step(&mut self, action: &[f64]) -> Step {
        let mut total = 0.0;
        let mut last = None;
        for _ in 0..self.repeat {
            let s = self.inner.step(action);
            total += s.reward;
            let stop = s.done || s.truncated;
            last = Some(s);
            if stop {
                break;
            }
        }
        let mut s = last.expect("repeat is at least one");
        s.reward = total;
        s
    }
    fn position(&self) -> Option<[f64; 2]> {
        self.inner.position()
    }
    fn success(&self) -> bool {
        self.inner.success()
    }
}

/// Truncates episodes after `limit` steps.
#[derive(Clone, Debug)]
pub struct TimeLimit<E> {
    pub inner: E,
    pub limit: usize,
    elapsed: usize,
}

impl<E: Env> TimeLimit<E> {
    pub fn new(inner: E, limit: usize) -> Self {
        Self {
            inner,
            limit,
            elapsed: 0,
        }
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }
}

impl<E: Env> Env for TimeLimit<E> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn reset(&mut self) -> Vec<f64> {
        self.elapsed = 0;
        self.inner.reset()
    }
    fn step(&mut self, action: &[f64]) -> Step {
        let mut s = self.inner.step(action);
        self.elapsed += 1;
        if self.elapsed >= self.limit && !s.done {
            s.truncated = true;
        }
        s
    }
    fn position(&self) -> Option<[f64; 2]> {
        self.inner.position()
    }
    fn success(&self) -> bool {
        self.inner.success()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{MazeEnv, MazeLayout};
    use super::*;

    #[test]
    fn repeat_and_limit_compose() {
        let mut env = TimeLimit::new(ActionRepeat::new(MazeEnv::new(MazeLayout::large()), 2), 3);
        env.reset();
        let a = env.step(&[1.0, 0.0]);
        assert!(!a.truncated);
        let p = env.position().unwrap();
        assert!((p[0] - 1.7).abs() < 1e-12);
        env.step(&[0.0, 0.0]);
        assert!(env.step(&[0.0, 0.0]).truncated);
        env.reset();
        assert_eq!(env.elapsed(), 0);
    }
}
