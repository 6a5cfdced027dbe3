//! Off-policy training: seed episodes with uniform actions, then
//! alternating collection (planner or reactive policy) and gradient updates.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ace_core::agent::Agent;
use ace_core::envs::{scripted_navigator_dataset, CoverageTracker, Env, Transition};
use ace_core::intrinsic::raw_errors;
use ace_core::nn::checkpoint::{self, Checkpoint};
use ace_core::nn::{Mode, Tensor};
use ace_core::oracle::{bias_report, BiasReport};
use ace_core::planner::{plan, PlannerConfig, PlannerState};
use ace_core::replay::{Episode, ReplayBuffer};
use ace_core::segment::SegmentBatch;
use ace_core::value::Learner;
use ace_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{RunConfig, Variant};
use crate::metrics::{Accumulator, MetricsRow, MetricsWriter};
use crate::task::Task;

/// Seed for the offline maze test set, shared by every run so variants are
/// scored on the same transitions.
pub const TEST_SET_SEED: u64 = 0x7e57;

/// Instrumentation for the update loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub env_steps: usize,
    pub episodes: usize,
    pub batches_sampled: usize,
    pub updates: usize,
    pub planner_calls: usize,
    pub planner_fallbacks: usize,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub agent: Agent<f32>,
    pub learner: Learner<f32>,
    pub replay: ReplayBuffer,
    pub counters: Counters,
    pub coverage: Option<CoverageTracker>,
    planner_cfg: PlannerConfig,
    planner: PlannerState,
    task: Task,
    rng: ChaCha8Rng,
    test_set: Vec<Transition>,
    /// Where to dump a batch that produced a non-finite loss.
    pub dump_dir: Option<PathBuf>,
}

fn stream(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(tag)
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let task = Task::new(&cfg, stream(cfg.seed, 1))?;
        let mut init = ChaCha8Rng::seed_from_u64(stream(cfg.seed, 2));
        let agent = Agent::new(cfg.agent_config(task.obs_dim(), task.action_dim()), &mut init)?;
        Self::with_agent(cfg, agent, task)
    }

    fn with_agent(cfg: RunConfig, agent: Agent<f32>, task: Task) -> Result<Self> {
        let learner = Learner::new(&agent, cfg.learner_config())?;
        let replay = ReplayBuffer::new(cfg.replay_config())?;
        let coverage = task.layout().map(CoverageTracker::new);
        let test_set = match task.layout() {
            Some(layout) if cfg.model_error_every > 0 && cfg.test_set_size > 0 => {
                let mut r = ChaCha8Rng::seed_from_u64(TEST_SET_SEED);
                scripted_navigator_dataset(layout, cfg.test_set_size, cfg.episode_length, &mut r).1
            }
            _ => Vec::new(),
        };
        Ok(Self {
            planner_cfg: cfg.planner_config(),
            planner: PlannerState::new(stream(cfg.seed, 3)),
            rng: ChaCha8Rng::seed_from_u64(stream(cfg.seed, 4)),
            cfg,
            agent,
            learner,
            replay,
            counters: Counters::default(),
            coverage,
            task,
            test_set,
            dump_dir: None,
        })
    }

    /// Episode index used by the planner schedules (counted from the end of
    /// the seed phase).
    fn schedule_episode(&self) -> usize {
        self.counters.episodes.saturating_sub(self.cfg.seed_episodes)
    }

    fn seeding(&self) -> bool {
        self.counters.episodes < self.cfg.seed_episodes
    }

    /// Action of the configured variant at `obs`.
    pub fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        let m = self.task.action_dim();
        if self.seeding() {
            return Ok((0..m).map(|_| self.rng.random_range(-1.0..=1.0)).collect());
        }
        self.policy_act(obs)
    }

    fn policy_act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        let (lo, hi) = (&self.agent.config.action_low, &self.agent.config.action_high);
        match self.cfg.variant {
            Variant::Greedy => {
                let z = self.agent.encode(&Tensor::row(obs.iter().map(|&v| v as f32).collect()))?;
                let a = self.agent.policy_action(&z)?;
                let noise = Normal::new(0.0, self.cfg.greedy_noise).map_err(|e| Error::Invalid(e.to_string()))?;
                Ok(a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (v as f64 + noise.sample(&mut self.rng)).clamp(lo[i], hi[i]))
                    .collect())
            }
            _ => {
                let root = self.agent.root(obs)?;
                let episode = self.schedule_episode();
                let out = plan(&mut self.planner, &self.planner_cfg, episode, &self.agent, &root)?;
                self.counters.planner_calls += 1;
                if out.fallback {
                    self.counters.planner_fallbacks += 1;
                }
                Ok(out.action)
            }
        }
    }

    /// One gradient iteration on one prioritized batch.
    pub fn update(&mut self) -> Result<ace_core::value::UpdateStats> {
        let segs = self.replay.sample(self.cfg.batch_size, &mut self.rng)?;
        self.counters.batches_sampled += 1;
        let handles: Vec<(usize, u64)> = segs.iter().map(|s| (s.index, s.generation)).collect();
        let batch = SegmentBatch::<f32>::from_segments(&segs)?;
        let st = match self.learner.update(&mut self.agent, &batch) {
            Ok(st) if st.total.is_finite() => st,
            Ok(st) => return Err(self.nan_abort(&segs, &format!("joint loss {}", st.total))),
            Err(e @ Error::NonFinite(_)) => return Err(self.nan_abort(&segs, &e.to_string())),
            Err(e) => return Err(e),
        };
        self.counters.updates += 1;
        self.replay.update_priorities(&handles, &st.priorities)?;
        Ok(st)
    }

    fn nan_abort(&self, segs: &[ace_core::segment::TrajectorySegment], what: &str) -> Error {
        if let Some(dir) = &self.dump_dir {
            let path = dir.join("nonfinite_batch.txt");
            let mut text = format!("# {what} at update {}\n", self.counters.updates);
            for (i, s) in segs.iter().enumerate() {
                text.push_str(&format!("segment {i} slot {} weight {}\n", s.index, s.weight));
                text.push_str(&format!("  obs {:?}\n  actions {:?}\n  rewards {:?}\n  dones {:?}\n", s.obs, s.actions, s.rewards, s.dones));
            }
            if fs::write(&path, text).is_ok() {
                log::error!("non-finite loss; batch written to {}", path.display());
            }
        }
        Error::NonFinite(format!("{what} at update {}", self.counters.updates))
    }

    /// Collects one episode, training after every step once seeding is over.
    pub fn run_episode(&mut self) -> Result<MetricsRow> {
        let train = !self.seeding();
        if self.cfg.variant != Variant::Greedy {
            self.planner.reset();
        }
        let mut obs = self.task.reset();
        if let (Some(c), Some(p)) = (self.coverage.as_mut(), self.task.position()) {
            c.visit(p);
        }
        let mut ep = Episode::new(obs.clone());
        let mut acc = Accumulator::default();
        let mut ret = 0.0;
        loop {
            let a = self.act(&obs)?;
            let s = self.task.step(&a);
            self.counters.env_steps += 1;
            if let (Some(c), Some(p)) = (self.coverage.as_mut(), self.task.position()) {
                c.visit(p);
            }
            ret += s.reward;
            ep.push(a, s.reward, s.obs.clone(), s.done);
            obs = s.obs;
            if train && !self.replay.is_empty() {
                for _ in 0..self.cfg.updates_per_step {
                    acc.add(&self.update()?);
                }
            }
            if s.done || s.truncated {
                break;
            }
        }
        let success = self.task.success();
        let spec = self.task.goal_spec().filter(|_| self.cfg.her_k > 0);
        self.replay.push_with_her(ep, self.cfg.her_k, spec, &mut self.rng)?;
        self.counters.episodes += 1;

        let mut row = MetricsRow {
            step: self.counters.env_steps,
            episode: self.counters.episodes,
            ret,
            coverage: self.coverage.as_ref().map(|c| c.coverage()),
            success,
            ..Default::default()
        };
        acc.fill(&mut row);
        let e = self.counters.episodes;
        if !self.test_set.is_empty() && e % self.cfg.model_error_every == 0 {
            row.model_error = Some(self.model_error()?);
        }
        if self.cfg.bias_every > 0 && train && e % self.cfg.bias_every == 0 {
            row.bias = Some(self.bias()?);
        }
        Ok(row)
    }

    /// Mean one-step latent prediction error on the offline test set.
    pub fn model_error(&self) -> Result<f64> {
        model_error(&self.agent, &self.test_set)
    }

    /// Critic estimates against Monte-Carlo returns of the acting rule from
    /// states drawn out of replay.
    pub fn bias(&mut self) -> Result<BiasReport> {
        let starts = self.replay.sample(self.cfg.bias_states, &mut self.rng)?;
        let saved = self.planner.clone();
        let gamma = self.cfg.discount;
        let (mut q_hat, mut q_mc) = (Vec::new(), Vec::new());
        for seg in starts {
            let mut q_sum = 0.0;
            let mut mc_sum = 0.0;
            for _ in 0..self.cfg.bias_rollouts {
                let mut env = self.task.clone();
                let mut obs = env.reset_to(&seg.obs[0])?;
                self.planner.reset();
                let mut first = None;
                let (mut g, mut disc) = (0.0, 1.0);
                loop {
                    let a = self.policy_act(&obs)?;
                    if first.is_none() {
                        let z = self.agent.encode(&Tensor::row(obs.iter().map(|&v| v as f32).collect()))?;
                        let at = Tensor::row(a.iter().map(|&v| v as f32).collect());
                        first = Some(self.agent.q_value(&z, &at)?[0] as f64);
                    }
                    let s = env.step(&a);
                    g += disc * s.reward;
                    disc *= gamma;
                    obs = s.obs;
                    if s.done || s.truncated {
                        break;
                    }
                }
                q_sum += first.expect("at least one step");
                mc_sum += g;
            }
            let n = self.cfg.bias_rollouts as f64;
            q_hat.push(q_sum / n);
            q_mc.push(mc_sum / n);
        }
        self.planner = saved;
        bias_report(&q_hat, &q_mc, 1)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.push(("init".into(), "uniform_fan_in".into()));
        ck.meta.push(("episodes".into(), self.counters.episodes.to_string()));
        ck.meta.push(("env_steps".into(), self.counters.env_steps.to_string()));
        ck.meta.push(("updates".into(), self.counters.updates.to_string()));
        for line in self.cfg.to_text().lines() {
            let (k, v) = line.split_once(" = ").expect("to_text writes key = value");
            ck.meta.push((format!("config.{k}"), v.to_string()));
        }
        ck.push_group("online", &self.agent.params);
        ck.push_group("target", &self.agent.target);
        ck.push_group("stats", &self.agent.stats);
        ck
    }

    pub fn into_agent(self) -> Agent<f32> {
        self.agent
    }
}

/// Mean one-step latent prediction error of `agent` over `set`.
pub fn model_error(agent: &Agent<f32>, set: &[Transition]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let to = |rows: Vec<&Vec<f64>>| {
        let w = rows[0].len();
        Tensor::from_rows(rows.len(), w, rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect())
    };
    let mut total = 0.0;
    for chunk in set.chunks(512) {
        let obs = to(chunk.iter().map(|t| &t.obs).collect());
        let act = to(chunk.iter().map(|t| &t.action).collect());
        let next = to(chunk.iter().map(|t| &t.next_obs).collect());
        total += raw_errors(agent, &obs, &act, &next, Mode::Eval)?.iter().sum::<f64>();
    }
    Ok(total / set.len() as f64)
}

/// Rebuilds the run configuration and agent stored in a checkpoint.
pub fn restore(stem: &Path) -> Result<(RunConfig, Agent<f32>)> {
    let ck = checkpoint::load(stem)?;
    let mut cfg = RunConfig::default();
    for (k, v) in &ck.meta {
        if let Some(key) = k.strip_prefix("config.") {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    let task = Task::new(&cfg, 0)?;
    let group = |name: &str| {
        ck.group(name)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks the {name} group")))
    };
    let agent = Agent::from_parts(cfg.agent_config(task.obs_dim(), task.action_dim()), group("online")?, group("target")?, group("stats")?)?;
    Ok((cfg, agent))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalEpisode {
    pub ret: f64,
    pub success: bool,
    pub coverage: Option<f64>,
    pub actions: Vec<Vec<f64>>,
}

/// Runs `episodes` episodes with the variant's acting rule and no learning.
/// Deterministic in (`agent`, `cfg`, `seed`).
pub fn evaluate(cfg: &RunConfig, agent: Agent<f32>, episodes: usize, seed: u64) -> Result<Vec<EvalEpisode>> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    cfg.seed_episodes = 0;
    cfg.model_error_every = 0;
    let task = Task::new(&cfg, stream(seed, 5))?;
    let mut t = Trainer::with_agent(cfg, agent, task)?;
    // Final schedule values.
    t.counters.episodes = t.planner_cfg.horizon.episodes.max(t.planner_cfg.std_floor.episodes);
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        t.planner.reset();
        let mut cov = t.task.layout().map(CoverageTracker::new);
        let mut obs = t.task.reset();
        let (mut ret, mut actions) = (0.0, Vec::new());
        loop {
            let a = t.policy_act(&obs)?;
            let s = t.task.step(&a);
            if let (Some(c), Some(p)) = (cov.as_mut(), t.task.position()) {
                c.visit(p);
            }
            ret += s.reward;
            actions.push(a);
            obs = s.obs;
            if s.done || s.truncated {
                break;
            }
        }
        out.push(EvalEpisode {
            ret,
            success: t.task.success(),
            coverage: cov.map(|c| c.coverage()),
            actions,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub counters: Counters,
    pub rows: Vec<MetricsRow>,
    pub final_coverage: Option<f64>,
    /// Sum of the model errors logged at evaluation points.
    pub cumulative_model_error: f64,
    pub final_checkpoint: PathBuf,
}

impl TrainSummary {
    /// Fraction of successful episodes among the last `window`.
    pub fn trailing_success(&self, window: usize) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(window)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|r| r.success).count() as f64 / tail.len() as f64
    }

    pub fn text(&self, cfg: &RunConfig) -> String {
        let mut s = format!(
            "env {} variant {} seed {}\nsteps {} episodes {} updates {} batches {}\n",
            cfg.env.name(),
            cfg.variant.name(),
            cfg.seed,
            self.counters.env_steps,
            self.counters.episodes,
            self.counters.updates,
            self.counters.batches_sampled
        );
        if let Some(c) = self.final_coverage {
            s.push_str(&format!("final coverage {c:.4}\n"));
        }
        s.push_str(&format!("cumulative model error {:.6}\n", self.cumulative_model_error));
        if let Some(last) = self.rows.last() {
            s.push_str(&format!("last return {:.4}\n", last.ret));
        }
        s.push_str(&format!("trailing success (10 episodes) {:.2}\n", self.trailing_success(10)));
        s
    }
}

/// Trains to `cfg.total_steps` (whole episodes), writing `metrics.csv`,
/// `timing.csv`, `config.txt`, checkpoints, a coverage map and `summary.txt`
/// under `out`.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let mut t = Trainer::new(cfg.clone())?;
    t.dump_dir = Some(out.to_path_buf());
    let mut metrics = MetricsWriter::create(&out.join("metrics.csv"))?;
    let mut timing = fs::File::create(out.join("timing.csv"))?;
    writeln!(timing, "episode,seconds")?;
    let start = Instant::now();
    checkpoint::save(&out.join("ckpt_00000"), &t.checkpoint())?;
    let mut rows = Vec::new();
    let mut cum = 0.0;
    while t.counters.env_steps < cfg.total_steps {
        let row = t.run_episode()?;
        metrics.write(&row)?;
        writeln!(timing, "{},{:.3}", row.episode, start.elapsed().as_secs_f64())?;
        cum += row.model_error.unwrap_or(0.0);
        log::info!(
            "{} seed {} episode {} step {} return {:.3} coverage {}",
            cfg.variant.name(),
            cfg.seed,
            row.episode,
            row.step,
            row.ret,
            row.coverage.map_or("-".into(), |c| format!("{c:.3}"))
        );
        if cfg.checkpoint_every > 0 && row.episode % cfg.checkpoint_every == 0 {
            checkpoint::save(&out.join(format!("ckpt_{:05}", row.episode)), &t.checkpoint())?;
        }
        rows.push(row);
    }
    let final_checkpoint = out.join("final");
    checkpoint::save(&final_checkpoint, &t.checkpoint())?;
    if let Some(c) = &t.coverage {
        fs::write(out.join("coverage.pgm"), c.to_pgm(8))?;
    }
    let summary = TrainSummary {
        counters: t.counters,
        final_coverage: t.coverage.as_ref().map(|c| c.coverage()),
        cumulative_model_error: cum,
        rows,
        final_checkpoint,
    };
    fs::write(out.join("summary.txt"), summary.text(cfg))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(variant: Variant, steps: usize) -> RunConfig {
        let mut c = RunConfig {
            variant,
            total_steps: steps,
            episode_length: 40,
            seed_episodes: 1,
            batch_size: 8,
            mlp_hidden_size: 16,
            gru_hidden_size: 8,
            encoder_hidden_size: 16,
            latent_dimension: 6,
            rollout_horizon: 3,
            planning_horizon: 3,
            iterations: 2,
            population_size: 16,
            elites: 4,
            test_set_size: 64,
            model_error_every: 1,
            bias_every: 0,
            checkpoint_every: 0,
            replay_buffer_size: 4096,
            ..RunConfig::default()
        };
        c.horizon_schedule_start = 2;
        c
    }

    #[test]
    fn each_update_samples_one_batch_and_takes_one_step() {
        let mut t = Trainer::new(tiny(Variant::Ace, 0)).unwrap();
        t.run_episode().unwrap();
        assert_eq!(t.counters.updates, 0);
        let row = t.run_episode().unwrap();
        let c = t.counters;
        assert_eq!(row.updates, 40);
        assert_eq!(c.updates, 40);
        assert_eq!(c.batches_sampled, c.updates);
        let n = c.updates as u64;
        assert_eq!(t.learner.optimizer_steps, n);
        assert_eq!(t.learner.iterations, n);
        assert_eq!(t.learner.policy_steps, n / 2);
    }

    #[test]
    fn blind_variant_logs_zero_intrinsic_reward() {
        let mut t = Trainer::new(tiny(Variant::AceBlind, 0)).unwrap();
        t.run_episode().unwrap();
        let row = t.run_episode().unwrap();
        assert_eq!(row.intrinsic_reward, Some(0.0));
        let mut t = Trainer::new(tiny(Variant::Ace, 0)).unwrap();
        t.run_episode().unwrap();
        assert!(t.run_episode().unwrap().intrinsic_reward.unwrap() > 0.0);
    }

    #[test]
    fn greedy_actions_stay_in_bounds() {
        let mut t = Trainer::new(tiny(Variant::Greedy, 0)).unwrap();
        t.counters.episodes = 5;
        let obs = t.task.reset();
        for _ in 0..50 {
            assert!(t.act(&obs).unwrap().iter().all(|a| (-1.0..=1.0).contains(a)));
        }
    }
}
