//! Small deterministic environments: a continuous maze, a point-mass goal
//! task and exact tabular MDPs.

mod dataset;
mod goal;
mod maze;
mod tabular;
mod wrappers;

pub use dataset::{maze_task, read_transitions, replay_matches, scripted_navigator_dataset, write_transitions, Transition, TransitionHeader};
pub use goal::{GoalTask, GoalTaskConfig, RewardMode};
pub use maze::{CoverageTracker, MazeEnv, MazeLayout, LARGE_MAZE};
pub use tabular::{action_bin, TabularMdp, TabularPlanner};
pub use wrappers::{ActionRepeat, TimeLimit};

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The new state is terminal.
    pub done: bool,
    /// The episode was cut by a time limit (not a terminal state).
    pub truncated: bool,
}

pub trait Env {
    fn id(&self) -> String;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Step;

    /// Agent position in maze cell units, when the task has one.
    fn position(&self) -> Option<[f64; 2]> {
        None
    }

    /// Whether the current episode has reached its goal (goal tasks only).
    fn success(&self) -> bool {
        false
    }
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn reset(&mut self) -> Vec<f64> {
        (**self).reset()
    }
    fn step(&mut self, action: &[f64]) -> Step {
        (**self).step(action)
    }
    fn position(&self) -> Option<[f64; 2]> {
        (**self).position()
    }
    fn success(&self) -> bool {
        (**self).success()
    }
}

/// Clamps `action` to `[-1, 1]`, warning the first few times it had to.
pub(crate) fn clip_action(action: &[f64], warned: &mut u32) -> Vec<f64> {
    let out: Vec<f64> = action.iter().map(|a| if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) }).collect();
    if out.iter().zip(action).any(|(o, a)| o != a) {
        if *warned < 3 {
            log::warn!("action {action:?} outside [-1, 1]; clipped");
        }
        *warned += 1;
    }
    out
}
