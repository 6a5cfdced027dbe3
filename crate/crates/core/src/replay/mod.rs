//! Prioritized segment replay with hindsight goal relabeling.

mod buffer;
mod her;
mod sum_tree;

pub use buffer::{Episode, ReplayBuffer, ReplayConfig, ReplayStats};
pub use her::{relabel, GoalSpec};
pub use sum_tree::SumTree;
