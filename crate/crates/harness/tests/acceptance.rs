//! One line per acceptance criterion, `[PASS]` or `[FAIL]`.
//!
//! Run with `cargo test --release -p ace-harness --test acceptance -- --nocapture`.
//! Criteria 7 and 8 train 25 agents between them and are ignored by default;
//! add `--include-ignored` to run them (well over an hour on one core).

use std::path::PathBuf;

use ace_harness::config::RunConfig;
use ace_harness::suites::{self, SuiteReport};
use ace_harness::trends;

fn report(id: u32, r: &SuiteReport) {
    println!("criterion {id}: {}", r.line());
}

#[test]
fn criterion_1_lambda_identity() {
    let r = suites::lambda_identity(1000, 1);
    report(1, &r);
    assert!(r.passed && r.elapsed.as_secs_f64() < 1.0, "{}", r.line());
}

#[test]
fn criterion_2_gradient_oracle() {
    let r = suites::gradient_suite(100);
    report(2, &r);
    assert!(r.passed && r.elapsed.as_secs() < 60, "{}", r.line());
}

#[test]
fn criterion_3_planner_matches_exhaustive() {
    let r = suites::planner_suite(1000, 3);
    report(3, &r);
    assert!(r.passed && r.elapsed.as_secs() < 120, "{}", r.line());
}

#[test]
fn criterion_4_lookahead_bound() {
    let r = suites::bound_suite(1000, 4);
    report(4, &r);
    assert!(r.passed && r.elapsed.as_secs() < 120, "{}", r.line());
}

#[test]
fn criterion_5_intrinsic_contract() {
    let r = suites::intrinsic_suite(5);
    report(5, &r);
    assert!(r.passed, "{}", r.line());
}

#[test]
fn criterion_6_replay_and_hindsight() {
    let r = suites::replay_suite(6, 100_000, 10_000);
    report(6, &r);
    assert!(r.passed, "{}", r.line());
}

fn config(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    RunConfig::load(&path).unwrap()
}

fn out_dir(name: &str) -> PathBuf {
    let dir = std::env::var_os("ACE_ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("ace-acceptance-{}", std::process::id())));
    dir.join(name)
}

#[test]
#[ignore = "trains 15 maze agents"]
fn criterion_7_maze_exploration_trend() {
    let r = trends::maze_trend(&config("maze_desk.cfg"), &[0, 1, 2, 3, 4], &out_dir("maze"));
    report(7, &r);
    assert!(r.passed, "{}", r.line());
}

#[test]
#[ignore = "trains 10 goal-reaching agents"]
fn criterion_8_sparse_goal_task() {
    let r = trends::sparse_goal(&config("pointmass_sparse_desk.cfg"), &[0, 1, 2, 3, 4], &out_dir("sparse"));
    report(8, &r);
    assert!(r.passed, "{}", r.line());
}

#[test]
fn criterion_9_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let r = trends::reproducibility(&config("maze_smoke.cfg"), dir.path());
    report(9, &r);
    assert!(r.passed, "{}", r.line());
}
