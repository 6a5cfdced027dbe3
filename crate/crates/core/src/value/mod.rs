//! Value targets, losses and the joint update.

mod learner;
mod targets;

pub use learner::{
    bootstrap_values, joint_loss, lambda_targets, policy_loss, prepare, raw_intrinsic, JointLoss, Learner, LearnerConfig,
    Prepared, TargetKind, UpdateStats,
};
pub use targets::{lambda_loss, lambda_weights, qk_target, qlambda_target, rho_weighted_sum, tdk_loss, tdk_targets, ValueTargetConfig};
