//! Sampling-based trajectory optimization over a learned (or exact) model.

mod icem;
mod noise;

pub use icem::{evaluate_sequences, plan, population_size, refit_distribution, top_elites, PlanOutcome, PlannerState, Scored};
pub use noise::{colored_noise, powerlaw_series};

use crate::error::{Error, Result};

/// Batched model the planner can roll out.
///
/// Actions are passed row-major, `n × action_dim`.
pub trait PlanningModel {
    type State: Clone;

    fn action_dim(&self) -> usize;
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// `n` copies of a single root state.
    fn broadcast(&self, root: &Self::State, n: usize) -> Result<Self::State>;
    /// Advances every state by one action, returning predicted rewards.
    fn step(&self, states: &Self::State, actions: &[f64]) -> Result<(Self::State, Vec<f64>)>;
    fn terminal_value(&self, states: &Self::State) -> Result<Vec<f64>>;
    fn policy(&self, states: &Self::State) -> Result<Vec<f64>>;
}

/// Linear ramp from `start` (episode 0) to `end` (episode `episodes − 1`),
/// then constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub episodes: usize,
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Self {
            start: v,
            end: v,
            episodes: 0,
        }
    }

    pub fn value(&self, episode: usize) -> f64 {
        if self.episodes <= 1 || episode + 1 >= self.episodes {
            return self.end;
        }
        self.start + (self.end - self.start) * episode as f64 / (self.episodes - 1) as f64
    }

    /// Integer schedule, stepping once per episode.
    pub fn steps(&self, episode: usize) -> usize {
        self.value(episode).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerConfig {
    pub horizon: Schedule,
    pub iterations: usize,
    pub population: usize,
    pub elites: usize,
    pub decay: f64,
    pub noise_beta: f64,
    pub temperature: f64,
    pub init_mean: f64,
    pub init_std: f64,
    pub std_floor: Schedule,
    pub elite_fraction: f64,
    pub policy_fraction: f64,
    pub mean_momentum: f64,
    pub gamma: f64,
    pub use_terminal_value: bool,
    /// Scale noise by `σ²` instead of `σ`.
    pub noise_scale_variance: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: Schedule {
                start: 2.0,
                end: 6.0,
                episodes: 5,
            },
            iterations: 6,
            population: 256,
            elites: 32,
            decay: 1.25,
            noise_beta: 2.5,
            temperature: 0.5,
            init_mean: 0.0,
            init_std: 0.5,
            std_floor: Schedule {
                start: 0.5,
                end: 0.05,
                episodes: 5,
            },
            elite_fraction: 0.25,
            policy_fraction: 0.5,
            mean_momentum: 0.1,
            gamma: 0.99,
            use_terminal_value: true,
            noise_scale_variance: false,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.iterations == 0 {
            return bad("planner needs at least one iteration");
        }
        if self.elites == 0 || self.population < 2 * self.elites {
            return bad("population must be at least twice the elite count");
        }
        if !(self.decay >= 1.0) {
            return bad("population decay must be at least 1");
        }
        if !(self.temperature > 0.0) {
            return bad("score temperature must be positive");
        }
        if self.horizon.start < 1.0 || self.horizon.end < 1.0 {
            return bad("planning horizon must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.elite_fraction) || !(0.0..=1.0).contains(&self.policy_fraction) {
            return bad("fractions must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mean_momentum) {
            return bad("mean momentum must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("discount must lie in [0, 1)");
        }
        if self.init_std < 0.0 || self.std_floor.start < 0.0 || self.std_floor.end < 0.0 {
            return bad("standard deviations must be non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_ramp_then_hold() {
        let h = PlannerConfig::default().horizon;
        let got: Vec<usize> = (0..8).map(|e| h.steps(e)).collect();
        assert_eq!(got, vec![2, 3, 4, 5, 6, 6, 6, 6]);
        for w in got.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let f = PlannerConfig::default().std_floor;
        assert_eq!(f.value(0), 0.5);
        assert!((f.value(4) - 0.05).abs() < 1e-15);
        assert!(f.value(2) < f.value(1));
    }

    #[test]
    fn rejects_small_population() {
        let c = PlannerConfig {
            population: 63,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(PlannerConfig::default().validate().is_ok());
    }
}
