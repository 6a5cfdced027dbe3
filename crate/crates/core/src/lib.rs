pub mod agent;
pub mod envs;
pub mod error;
pub mod intrinsic;
pub mod nn;
pub mod oracle;
pub mod planner;
pub mod replay;
pub mod scalar;
pub mod segment;
pub mod value;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type ParamSet32 = nn::ParamSet<f32>;
pub type ParamSet64 = nn::ParamSet<f64>;
pub type Agent32 = agent::Agent<f32>;
pub type Agent64 = agent::Agent<f64>;
pub type Learner32 = value::Learner<f32>;
pub type SegmentBatch32 = segment::SegmentBatch<f32>;
