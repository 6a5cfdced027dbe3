use ace_core::envs::{maze_task, ActionRepeat, Env, GoalTask, GoalTaskConfig, MazeEnv, MazeLayout, RewardMode, Step, TimeLimit};
use ace_core::replay::GoalSpec;
use ace_core::{Error, Result};

use crate::config::{EnvKind, RunConfig};

/// The environments a run can use, with the extra hooks the trainer needs
/// (state restore for Monte-Carlo rollouts, goal relabeling, the layout).
#[derive(Clone, Debug)]
pub enum Task {
    Maze(TimeLimit<ActionRepeat<MazeEnv>>),
    Goal(TimeLimit<GoalTask>),
}

pub fn load_layout(cfg: &RunConfig) -> Result<MazeLayout> {
    if cfg.maze_file.is_empty() {
        return Ok(MazeLayout::large());
    }
    let text = std::fs::read_to_string(&cfg.maze_file).map_err(|e| Error::Invalid(format!("{}: {e}", cfg.maze_file)))?;
    MazeLayout::parse(&text)
}

fn goal_config(cfg: &RunConfig) -> GoalTaskConfig {
    GoalTaskConfig {
        arena: cfg.goal_arena,
        min_goal_distance: cfg.goal_min_distance,
        reward: if cfg.env == EnvKind::PointMassDense {
            RewardMode::Dense
        } else {
            RewardMode::Sparse
        },
        ..GoalTaskConfig::default()
    }
}

impl Task {
    /// Environment for `cfg`, its randomness seeded from `seed`.
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        Ok(match cfg.env {
            EnvKind::Maze => Task::Maze(maze_task(load_layout(cfg)?, cfg.episode_length)),
            _ => Task::Goal(TimeLimit::new(GoalTask::new(goal_config(cfg), seed), cfg.episode_length)),
        })
    }

    pub fn layout(&self) -> Option<&MazeLayout> {
        match self {
            Task::Maze(m) => Some(&m.inner.inner.layout),
            Task::Goal(_) => None,
        }
    }

    pub fn goal_spec(&self) -> Option<&dyn GoalSpec> {
        match self {
            Task::Maze(_) => None,
            Task::Goal(g) => Some(&g.inner),
        }
    }

    /// Resets, then places the environment in the state behind `obs`.
    pub fn reset_to(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        self.reset();
        match self {
            Task::Maze(m) => {
                let env = &mut m.inner.inner;
                let pos = env.obs_to_position(obs);
                env.set_position(pos)?;
                Ok(env.observe())
            }
            Task::Goal(g) => {
                let env = &mut g.inner;
                let (arena, v) = (env.config.arena, env.config.max_speed);
                let un = |o: f64| (o + 1.0) * 0.5 * arena;
                env.set_state([un(obs[0]), un(obs[1])], [obs[2] * v, obs[3] * v], [un(obs[4]), un(obs[5])]);
                Ok(env.observe())
            }
        }
    }
}

impl Env for Task {
    fn id(&self) -> String {
        match self {
            Task::Maze(m) => m.id(),
            Task::Goal(g) => g.id(),
        }
    }
    fn obs_dim(&self) -> usize {
        match self {
            Task::Maze(m) => m.obs_dim(),
            Task::Goal(g) => g.obs_dim(),
        }
    }
    fn action_dim(&self) -> usize {
        match self {
            Task::Maze(m) => m.action_dim(),
            Task::Goal(g) => g.action_dim(),
        }
    }
    fn reset(&mut self) -> Vec<f64> {
        match self {
            Task::Maze(m) => m.reset(),
            Task::Goal(g) => g.reset(),
        }
    }
    fn step(&mut self, action: &[f64]) -> Step {
        match self {
            Task::Maze(m) => m.step(action),
            Task::Goal(g) => g.step(action),
        }
    }
    fn position(&self) -> Option<[f64; 2]> {
        match self {
            Task::Maze(m) => m.position(),
            Task::Goal(g) => g.position(),
        }
    }
    fn success(&self) -> bool {
        match self {
            Task::Maze(m) => m.success(),
            Task::Goal(g) => g.success(),
        }
    }
}
