//! Self-checks shared by `ace oracle-check` and the acceptance tests.
//!
//! Each suite is deterministic given its seed and returns a [`SuiteReport`].

use std::time::{Duration, Instant};

use ace_core::agent::{normalized_sq_distance, Agent, AgentConfig};
use ace_core::envs::{action_bin, GoalTask, GoalTaskConfig, TabularMdp, TabularPlanner};
use ace_core::intrinsic::{NormalizerConfig, RewardNormalizer};
use ace_core::nn::{Activation, Graph, GruCell, Mlp, Mode, Norm, ParamSet, Source, Tensor, Var};
use ace_core::oracle::{check_gradients, exhaustive_plan, random_bound_instance, value_iteration, GradCheck};
use ace_core::planner::{plan, PlannerConfig, PlannerState, Schedule};
use ace_core::replay::{relabel, Episode, GoalSpec, ReplayBuffer, ReplayConfig};
use ace_core::segment::{SegmentBatch, TrajectorySegment};
use ace_core::value::{joint_loss, lambda_weights, prepare, qk_target, qlambda_target, TargetKind, ValueTargetConfig};
use ace_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

pub(crate) fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteReport {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(x) => x,
        Err(e) => (false, format!("error: {e}")),
    };
    SuiteReport {
        name,
        passed,
        detail,
        elapsed: t.elapsed(),
    }
}

// ---------------------------------------------------------------------------
// λ-target identities

/// Random segment values for the target identities.
fn random_segment(rng: &mut ChaCha8Rng, len: usize) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
    let r = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d = (0..len).map(|_| rng.random_bool(0.1)).collect();
    let v = (0..=len).map(|_| rng.random_range(-5.0..5.0)).collect();
    (r, d, v)
}

pub fn lambda_identity(trials: usize, seed: u64) -> SuiteReport {
    timed("lambda-identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst_sum = 0.0f64;
        let mut worst_h = 0.0f64;
        for _ in 0..trials {
            let lambda: f64 = rng.random();
            let h = rng.random_range(1..=16usize);
            let w = lambda_weights(lambda, h);
            worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
            if w.iter().any(|&x| x < 0.0) {
                return Ok((false, format!("negative weight at λ={lambda}, H={h}")));
            }
            let len = h + rng.random_range(0..4usize);
            let (r, d, v) = random_segment(&mut rng, len);
            let gamma = rng.random_range(0.0..1.0);
            let end = len;
            for i in 0..=end.min(len - 1) {
                let td0 = qlambda_target(&r, &d, &v, gamma, 0.0, h, end, i)?;
                let one = qk_target(&r, &d, &v, gamma, end, i, 1)?;
                if td0.to_bits() != one.to_bits() {
                    return Ok((false, format!("λ=0 target {td0} differs from one-step {one}")));
                }
                let full = qlambda_target(&r, &d, &v, gamma, 1.0, h, end, i)?;
                let qh = qk_target(&r, &d, &v, gamma, end, i, h)?;
                worst_h = worst_h.max((full - qh).abs());
            }
        }
        let ok = worst_sum <= 1e-12 && worst_h <= 1e-12;
        Ok((
            ok,
            format!("{trials} (λ, H) pairs, max |Σw − 1| = {worst_sum:.1e}, max |Q_λ=1 − Q^H| = {worst_h:.1e}"),
        ))
    })
}

// ---------------------------------------------------------------------------
// Gradient checks

pub const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

/// A differentiable probe: builds a scalar loss from `params`.
type Probe = dyn for<'p> Fn(&mut Graph<'p, f64>, Source<'p, f64>) -> Result<Var>;

fn probe<F>(f: F) -> F
where
    F: for<'p> Fn(&mut Graph<'p, f64>, Source<'p, f64>) -> Result<Var>,
{
    f
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_rows(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect())
}

/// `sum(out ⊙ c)` for a fixed random `c`, so no symmetric cancellation hides
/// an error (a plain sum of a normalized row is identically zero).
fn contract(g: &mut Graph<'_, f64>, out: Var, c: &Tensor<f64>) -> Var {
    let cv = g.constant(c.clone());
    let p = g.mul(out, cv);
    g.sum(p)
}

fn check_probe(params: &ParamSet<f64>, stats: &ParamSet<f64>, mode: Mode, probe: &Probe) -> Result<GradCheck> {
    let analytic = {
        let mut g = Graph::new(mode);
        let loss = probe(&mut g, Source::trainable(params, stats))?;
        g.backward(loss, params)?
    };
    let f = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new(mode);
        let loss = probe(&mut g, Source::trainable(ps, stats))?;
        Ok(g.value(loss).item())
    };
    check_gradients::<ChaCha8Rng>(params, &analytic, f, FD_STEP, None)
}

fn layer_cases(seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 5;
    let mut out = Vec::new();
    let x = random_tensor(&mut rng, n, 4, 1.5);

    let mlps: [(&'static str, Mlp, Mode); 6] = [
        ("linear", Mlp::new(vec![4, 3], Activation::Linear, Norm::None), Mode::Train),
        ("mlp-elu", Mlp::new(vec![4, 6, 3], Activation::Elu, Norm::None), Mode::Train),
        ("mlp-tanh-sigmoid", Mlp::new(vec![4, 6, 3], Activation::Tanh, Norm::None).with_output(Activation::Sigmoid), Mode::Train),
        ("layernorm", Mlp::new(vec![4, 6, 3], Activation::Elu, Norm::Layer), Mode::Train),
        ("batchnorm-train", Mlp::new(vec![4, 6, 3], Activation::Elu, Norm::Batch), Mode::Train),
        ("batchnorm-eval", Mlp::new(vec![4, 6, 3], Activation::Elu, Norm::Batch), Mode::Eval),
    ];
    for (name, mlp, mode) in mlps {
        let (mut ps, mut st) = (ParamSet::new(), ParamSet::new());
        mlp.init("m", &mut rng, &mut ps, &mut st)?;
        // Non-trivial norm affine parameters and running statistics.
        for (k, t) in ps.iter_mut() {
            if k.contains(".n") {
                for v in t.data_mut() {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
        }
        for (k, t) in st.iter_mut() {
            for v in t.data_mut() {
                *v = if k.ends_with(".var") {
                    rng.random_range(0.5..2.0)
                } else {
                    rng.random_range(-0.5..0.5)
                };
            }
        }
        let c = random_tensor(&mut rng, n, 3, 1.0);
        let xx = x.clone();
        let probe = probe(move |g, src| {
            let xv = g.constant(xx.clone());
            let y = mlp.forward(g, src, "m", xv)?;
            Ok(contract(g, y, &c))
        });
        out.push((name, check_probe(&ps, &st, mode, &probe)?));
    }

    for (name, ln) in [("gru", false), ("gru-layernorm", true)] {
        let cell = GruCell {
            input: 4,
            hidden: 6,
            layer_norm: ln,
        };
        let mut ps = ParamSet::new();
        cell.init("g", &mut rng, &mut ps)?;
        for (_, t) in ps.iter_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let h0 = random_tensor(&mut rng, n, 6, 1.0);
        let c = random_tensor(&mut rng, n, 6, 1.0);
        let xx = x.clone();
        // Two steps, so the recurrent path is exercised.
        let probe = probe(move |g, src| {
            let xv = g.constant(xx.clone());
            let h = g.constant(h0.clone());
            let h1 = cell.forward(g, src, "g", xv, h)?;
            let h2 = cell.forward(g, src, "g", xv, h1)?;
            Ok(contract(g, h2, &c))
        });
        out.push((name, check_probe(&ps, &ParamSet::new(), Mode::Train, &probe)?));
    }

    // l2 normalization, concatenation and squared distance, as used by the
    // latent consistency loss.
    let mut ps = ParamSet::new();
    ps.insert("a", random_tensor(&mut rng, n, 3, 1.0))?;
    ps.insert("b", random_tensor(&mut rng, n, 2, 1.0))?;
    ps.insert("y", random_tensor(&mut rng, n, 5, 1.0))?;
    let probe = probe(|g, src| {
        let a = src.var(g, "a")?;
        let b = src.var(g, "b")?;
        let y = src.var(g, "y")?;
        let cat = g.concat(&[a, b]);
        let p = g.l2_normalize(cat, 1e-8);
        let q = g.l2_normalize(y, 1e-8);
        let d = g.sub(p, q);
        let d2 = g.square(d);
        let s = g.sum_rows(d2);
        Ok(g.mean(s))
    });
    out.push(("l2-concat-distance", check_probe(&ps, &ParamSet::new(), Mode::Train, &probe)?));
    Ok(out)
}

fn tiny_agent_config() -> AgentConfig {
    AgentConfig {
        latent_dim: 4,
        encoder_hidden: 6,
        mlp_hidden: 6,
        gru_hidden: 5,
        ..AgentConfig::new(3, 2)
    }
}

fn random_batch(rng: &mut ChaCha8Rng, cfg: &AgentConfig, len: usize, b: usize) -> Result<SegmentBatch<f64>> {
    let segs = (0..b)
        .map(|_| {
            let obs = (0..=len).map(|_| (0..cfg.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let actions = (0..len).map(|_| (0..cfg.action_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let rewards = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut s = TrajectorySegment::new(obs, actions, rewards, vec![false; len])?;
            s.weight = rng.random_range(0.5..1.5);
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    SegmentBatch::from_segments(&segs)
}

/// Finite-difference check of the full joint loss of a tiny agent, with
/// intrinsic rewards and λ-targets held fixed as the learner does.
fn joint_loss_case(seed: u64, coords_per_tensor: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let cfg = tiny_agent_config();
    let mut agent = Agent::<f64>::new(cfg.clone(), &mut rng)?;
    for (_, t) in agent.params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    for (_, t) in agent.target.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let tcfg = ValueTargetConfig {
        horizon: 3,
        ..Default::default()
    };
    let batch = random_batch(&mut rng, &cfg, tcfg.horizon + 1, 4)?;
    let mut norm = RewardNormalizer::new(NormalizerConfig::default());
    let prepared = prepare(&agent, &batch, &tcfg, TargetKind::Lambda, Some(&mut norm))?;
    let (target, stats) = (agent.target.clone(), agent.stats.clone());

    let analytic = {
        let mut g = Graph::new(Mode::Train);
        let jl = joint_loss(&agent, &mut g, agent.online(), &batch, &prepared, &tcfg, TargetKind::Lambda)?;
        g.backward(jl.total, &agent.params)?
    };
    // The tiny policy is not part of the joint loss.
    let analytic = analytic.filter(|n| !Agent::<f64>::is_policy_param(n));
    let params = agent.params.filter(|n| !Agent::<f64>::is_policy_param(n));
    let policy = agent.params.filter(Agent::<f64>::is_policy_param);
    let f = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut all = ps.clone();
        for (k, t) in policy.iter() {
            all.insert(k, t.clone())?;
        }
        let a = Agent::from_parts(cfg.clone(), all, target.clone(), stats.clone())?;
        let mut g = Graph::new(Mode::Train);
        let jl = joint_loss(&a, &mut g, a.online(), &batch, &prepared, &tcfg, TargetKind::Lambda)?;
        Ok(g.value(jl.total).item())
    };
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    check_gradients(&params, &analytic, f, FD_STEP, Some((coords_per_tensor, &mut pick)))
}

pub fn gradient_suite(seeds: u64) -> SuiteReport {
    timed("gradients", || {
        let mut worst: Option<(String, f64)> = None;
        let mut checked = 0usize;
        let mut cases = 0usize;
        for seed in 0..seeds {
            let mut all = layer_cases(seed)?;
            all.push(("joint-loss", joint_loss_case(seed, 4)?));
            for (name, gc) in all {
                checked += gc.checked;
                cases += 1;
                if worst.as_ref().is_none_or(|w| gc.max_rel_err > w.1) {
                    worst = Some((format!("{name} {} seed {seed}", gc.worst), gc.max_rel_err));
                }
            }
        }
        let (at, err) = worst.unwrap_or_default();
        Ok((
            err < GRAD_TOL,
            format!("{cases} cases over {seeds} seeds, {checked} coordinates, max rel err {err:.2e} at {at}"),
        ))
    })
}

// ---------------------------------------------------------------------------
// Planner versus exhaustive enumeration

/// iCEM settings for the tabular cross-check: population large enough to
/// cover all `|A|^3 ≤ 125` bin sequences in the first iteration.
pub fn tabular_planner_config(horizon: usize) -> PlannerConfig {
    PlannerConfig {
        horizon: Schedule::constant(horizon as f64),
        iterations: 4,
        population: 512,
        elites: 32,
        noise_beta: 0.0,
        init_std: 1.0,
        std_floor: Schedule::constant(0.05),
        policy_fraction: 0.05,
        ..PlannerConfig::default()
    }
}

pub fn planner_suite(instances: usize, seed: u64) -> SuiteReport {
    timed("planner-vs-exhaustive", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 3;
        let mut matches = 0usize;
        let mut worst_rel = 0.0f64;
        for i in 0..instances {
            let ns = rng.random_range(2..=6usize);
            let na = rng.random_range(2..=5usize);
            let gamma = rng.random_range(0.5..0.99);
            let mdp = TabularMdp::random(&mut rng, ns, na, gamma, 1.0);
            let terminal = value_iteration(&mdp, 1e-10)?.values;
            let s0 = rng.random_range(0..ns);
            let model = TabularPlanner::new(&mdp, terminal.clone());
            let root = vec![model.one_hot(s0)];
            let cfg = PlannerConfig {
                gamma,
                ..tabular_planner_config(h)
            };
            let mut state = PlannerState::new(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            let out = plan(&mut state, &cfg, 0, &model, &root)?;
            let exact = exhaustive_plan(&mdp, &model.one_hot(s0), h, &terminal)?;
            if action_bin(out.action[0], na) == exact.actions[0] {
                matches += 1;
            }
            let rel = (exact.value - out.best.score).abs() / exact.value.abs().max(1e-12);
            worst_rel = worst_rel.max(rel);
        }
        let rate = matches as f64 / instances as f64;
        Ok((
            rate >= 0.99 && worst_rel <= 0.01,
            format!("{instances} instances, first-action agreement {:.1}%, worst return gap {:.3}%", 100.0 * rate, 100.0 * worst_rel),
        ))
    })
}

// ---------------------------------------------------------------------------
// Lookahead bound

pub fn bound_suite(instances: usize, seed: u64) -> SuiteReport {
    timed("corollary-bound", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut violations = 0usize;
        let mut tightest = f64::INFINITY;
        let mut nontrivial = 0usize;
        for _ in 0..instances {
            let h = rng.random_range(1..=4usize);
            let na = rng.random_range(2..=4usize);
            let eps_r = rng.random_range(0.0..0.5);
            let noise = rng.random_range(0.0..2.0);
            let bc = random_bound_instance(&mut rng, 6, na, h, eps_r, noise)?;
            if !bc.holds {
                violations += 1;
            }
            if bc.gap > 0.0 {
                nontrivial += 1;
                tightest = tightest.min(bc.rhs - bc.gap);
            }
        }
        Ok((
            violations == 0,
            format!("{instances} MDPs, {violations} violations, {nontrivial} with a positive gap, min slack {tightest:.3}"),
        ))
    })
}

// ---------------------------------------------------------------------------
// Intrinsic reward contract

pub fn intrinsic_suite(seed: u64) -> SuiteReport {
    timed("intrinsic-contract", || {
        let e = [1.0f64, 0.0, 0.0];
        let fixtures = [
            (normalized_sq_distance(&e, &e), 0.0),
            (normalized_sq_distance(&e, &[0.0, 2.0, 0.0]), 2.0),
            (normalized_sq_distance(&e, &[-3.0, 0.0, 0.0]), 4.0),
        ];
        let fixture_err = fixtures.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut range_ok = true;
        for _ in 0..2000 {
            let a: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
            let d = normalized_sq_distance(&a, &b);
            range_ok &= (0.0..=4.0).contains(&d);
        }

        let mut n = RewardNormalizer::new(NormalizerConfig::default());
        let constant = vec![0.7; 64];
        let mut last = Vec::new();
        for _ in 0..2000 {
            last = n.normalize_batch(&constant)?.rewards;
        }
        let constant_ok = last.iter().all(|&r| r == 0.0);

        let mut n = RewardNormalizer::new(NormalizerConfig::default());
        let mut unit_ok = true;
        for _ in 0..500 {
            let scale = rng.random_range(0.0..100.0);
            let raw: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..4.0) * scale).collect();
            let out = n.normalize_batch(&raw)?;
            unit_ok &= out.rewards.iter().all(|r| (0.0..=1.0).contains(r));
        }
        let ok = fixture_err < 1e-6 && range_ok && constant_ok && unit_ok;
        Ok((
            ok,
            format!(
                "fixtures 0/2/4 within {fixture_err:.1e}, range [0,4] {}, constant stream → 0 {}, outputs in [0,1] {}",
                yes(range_ok),
                yes(constant_ok),
                yes(unit_ok)
            ),
        ))
    })
}

fn yes(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "violated"
    }
}

// ---------------------------------------------------------------------------
// Prioritized replay and hindsight relabeling

fn random_episode(rng: &mut ChaCha8Rng, len: usize, obs_dim: usize) -> Episode {
    // The first coordinate is the step index, so boundaries are recoverable
    // from a segment alone.
    let mut first: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    first[0] = 0.0;
    let mut ep = Episode::new(first);
    for t in 0..len {
        let done = t + 1 == len && rng.random_bool(0.5);
        let mut o: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        o[0] = (t + 1) as f64;
        ep.push(vec![rng.random_range(-1.0..1.0)], rng.random(), o, done);
    }
    ep
}

pub fn replay_suite(seed: u64, draws: usize, trials: usize) -> SuiteReport {
    timed("replay-her", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // χ² goodness of fit of sampling frequencies against priorities.
        let cfg = ReplayConfig {
            segment_len: 3,
            capacity: 64,
            ..ReplayConfig::default()
        };
        let mut buf = ReplayBuffer::new(cfg.clone())?;
        for _ in 0..4 {
            buf.push_episode(random_episode(&mut rng, 6, 2))?;
        }
        let n = buf.len();
        let handles: Vec<(usize, u64)> = (0..cfg.capacity)
            .filter_map(|i| buf.segment_at(i).map(|s| (s.index, s.generation)))
            .collect();
        let td: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..3.0)).collect();
        buf.update_priorities(&handles, &td)?;
        let total = buf.total_priority();
        let mut counts = vec![0usize; cfg.capacity];
        let chunk = 1000;
        for _ in 0..draws / chunk {
            for s in buf.sample(chunk, &mut rng)? {
                counts[s.index] += 1;
            }
        }
        let drawn = (draws / chunk * chunk) as f64;
        let chi2: f64 = handles
            .iter()
            .map(|&(i, _)| {
                let e = drawn * buf.priority(i) / total;
                (counts[i] as f64 - e).powi(2) / e
            })
            .sum();
        let p = 1.0 - ChiSquared::new((n - 1) as f64).map_err(|e| Error::Invalid(e.to_string()))?.cdf(chi2);

        // Hindsight rewards against the goal predicate.
        let task = GoalTask::new(GoalTaskConfig::default(), seed);
        let mut her_ok = true;
        let mut relabeled = 0usize;
        for k in 0..50u64 {
            let mut env = GoalTask::new(GoalTaskConfig::default(), seed + k);
            let ep = goal_episode(&mut env, &mut rng, 40);
            for r in relabel(&ep, 7, 4, &task, &mut rng)? {
                relabeled += 1;
                her_ok &= her_consistent(&task, &r);
            }
        }

        // Segment boundary property.
        let mut boundary_ok = true;
        for _ in 0..trials {
            let l = rng.random_range(1..=8usize);
            let cfg = ReplayConfig {
                segment_len: l,
                capacity: rng.random_range(16..64usize),
                ..ReplayConfig::default()
            };
            let mut buf = ReplayBuffer::new(cfg)?;
            for _ in 0..rng.random_range(1..5usize) {
                let len = rng.random_range(1..12usize);
                buf.push_episode(random_episode(&mut rng, len, 2))?;
            }
            for s in buf.sample(8, &mut rng)? {
                boundary_ok &= segment_within_episode(&s);
            }
        }
        let ok = p > 0.01 && her_ok && boundary_ok && relabeled > 0;
        Ok((
            ok,
            format!(
                "χ² = {chi2:.1} on {} dof, p = {p:.3}; {relabeled} relabeled segments {}; {trials} boundary trials {}",
                n - 1,
                yes(her_ok),
                yes(boundary_ok)
            ),
        ))
    })
}

fn goal_episode(env: &mut GoalTask, rng: &mut ChaCha8Rng, len: usize) -> Episode {
    use ace_core::envs::Env;
    let mut ep = Episode::new(env.reset());
    for _ in 0..len {
        let a = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let st = env.step(&a);
        ep.push(a, st.reward, st.obs, st.done);
    }
    ep
}

fn her_consistent(task: &GoalTask, ep: &Episode) -> bool {
    (0..ep.len()).all(|t| {
        let achieved = task.achieved_goal(&ep.obs[t + 1]);
        let goal = &ep.obs[t + 1][4..6];
        task.goal_reward(&achieved, goal) == ep.rewards[t]
    })
}

/// Step tags must increase by one, except across the padded tail of a
/// short episode, which repeats the final state.
fn segment_within_episode(s: &TrajectorySegment) -> bool {
    let mut ended = false;
    for i in 1..s.obs.len() {
        let (prev, o) = (&s.obs[i - 1], &s.obs[i]);
        if ended || (s.dones[i - 1] && o == prev) {
            if o != prev {
                return false;
            }
            ended = true;
            continue;
        }
        if o[0] != prev[0] + 1.0 {
            return false;
        }
        ended = s.dones[i - 1];
    }
    true
}
