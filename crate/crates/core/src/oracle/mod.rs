//! Brute-force references: exact tabular dynamic programming, exhaustive
//! planning, the lookahead performance bound, value-bias statistics and
//! finite-difference gradients.

mod bias;
mod bound;
mod gradcheck;
mod tabular;

pub use bias::{bias_report, BiasReport, BIAS_FLOOR};
pub use bound::{check_corollary1, random_bound_instance, BoundCheck, BoundInputs};
pub use gradcheck::{check_gradients, relative_error, GradCheck, REL_FLOOR};
pub use tabular::{
    bellman_backup, evaluate_policy, exhaustive_plan, lookahead_policy, q_from_values, value_iteration, value_iteration_with,
    ExhaustivePlan, ValueIteration,
};
