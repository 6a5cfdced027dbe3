use ace_core::envs::TabularMdp;
use ace_core::oracle::{check_corollary1, random_bound_instance};
use ace_core::oracle::{bellman_backup, evaluate_policy, exhaustive_plan, lookahead_policy, q_from_values, value_iteration};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mdp(seed: u64, ns: usize, na: usize, gamma: f64) -> TabularMdp {
    TabularMdp::random(&mut ChaCha8Rng::seed_from_u64(seed), ns, na, gamma, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn value_iteration_reaches_the_bellman_fixpoint(seed in 0u64..10_000, ns in 1usize..7, na in 1usize..5, gamma in 0.0f64..0.95) {
        let m = mdp(seed, ns, na, gamma);
        let vi = value_iteration(&m, 1e-12).unwrap();
        let again = bellman_backup(&m, &m.r, &vi.values);
        for (a, b) in again.iter().zip(&vi.values) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let v_pi = evaluate_policy(&m, &m.r, &vi.policy).unwrap();
        for (a, b) in v_pi.iter().zip(&vi.values) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn one_step_enumeration_is_the_greedy_backup(seed in 0u64..10_000, ns in 1usize..6, na in 1usize..5) {
        let m = mdp(seed, ns, na, 0.9);
        let terminal: Vec<f64> = (0..ns).map(|s| s as f64 * 0.3).collect();
        let q = q_from_values(&m, &m.r, &terminal);
        for s in 0..ns {
            let mut start = vec![0.0; ns];
            start[s] = 1.0;
            let plan = exhaustive_plan(&m, &start, 1, &terminal).unwrap();
            let best = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((plan.value - best).abs() < 1e-12);
            prop_assert_eq!(q[s][plan.actions[0]], best);
        }
    }

    #[test]
    fn lookahead_with_the_optimal_terminal_is_optimal(seed in 0u64..10_000, h in 1usize..5) {
        let m = mdp(seed, 5, 3, 0.8);
        let vi = value_iteration(&m, 1e-12).unwrap();
        let (policy, _) = lookahead_policy(&m, &m.r, &vi.values, h);
        let v = evaluate_policy(&m, &m.r, &policy).unwrap();
        for (a, b) in v.iter().zip(&vi.values) {
            prop_assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn random_instances_respect_the_bound(seed in 0u64..10_000, h in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_bound_instance(&mut rng, 5, 3, h, 0.4, 1.5).unwrap();
        prop_assert!(c.holds, "gap {} rhs {}", c.gap, c.rhs);
        prop_assert!(c.gap >= -1e-9);
    }
}

#[test]
fn exact_values_close_the_gap() {
    let m = mdp(17, 4, 3, 0.9);
    let vi = value_iteration(&m, 1e-13).unwrap();
    let zero = vec![vec![0.0; 3]; 4];
    let c = check_corollary1(&m, &vi.values, &zero, 2).unwrap();
    assert!(c.gap.abs() < 1e-8, "{c:?}");
    assert!(c.inputs.eps_v < 1e-8 && c.inputs.eps_r == 0.0);
}

#[test]
fn enumeration_refuses_huge_trees() {
    let m = mdp(1, 2, 5, 0.9);
    assert!(exhaustive_plan(&m, &[1.0, 0.0], 9, &[0.0, 0.0]).is_err());
}
