//! Minimal reverse-mode autodiff and the layers the agent is built from.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Mode, StatUpdate, Var};
pub use layers::{apply_stat_updates, Activation, GruCell, Mlp, Norm, Source};
pub use optim::{ema_update, AdamW, AdamWConfig};
pub use params::ParamSet;
pub use tensor::Tensor;
