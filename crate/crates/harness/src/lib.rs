pub mod config;
pub mod experiments;
pub mod metrics;
pub mod suites;
pub mod task;
pub mod trainer;
pub mod trends;
