//! Run configuration as a flat `key = value` file.
//!
//! Keys are the hyper-parameter names in snake case. Blank lines
//! and `#` comments are ignored; unknown keys and duplicates are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ace_core::agent::AgentConfig;
use ace_core::intrinsic::NormalizerConfig;
use ace_core::nn::AdamWConfig;
use ace_core::planner::{PlannerConfig, Schedule};
use ace_core::replay::ReplayConfig;
use ace_core::value::{LearnerConfig, TargetKind, ValueTargetConfig};
use ace_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Ace,
    AceBlind,
    IcemNoValue,
    Greedy,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ace, Variant::AceBlind, Variant::IcemNoValue, Variant::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ace => "ace",
            Variant::AceBlind => "ace-blind",
            Variant::IcemNoValue => "icem-no-value",
            Variant::Greedy => "greedy",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Maze,
    PointMassSparse,
    PointMassDense,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Maze => "maze",
            EnvKind::PointMassSparse => "pointmass-sparse",
            EnvKind::PointMassDense => "pointmass-dense",
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [EnvKind::Maze, EnvKind::PointMassSparse, EnvKind::PointMassDense]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown env {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    /// Maze layout file; the built-in large maze when empty.
    pub maze_file: String,
    pub variant: Variant,
    pub seed: u64,
    /// Agent decisions in total (each maze decision is two physics steps).
    pub total_steps: usize,
    pub episode_length: usize,
    pub seed_episodes: usize,
    pub updates_per_step: usize,

    pub discount: f64,
    pub lambda: f64,
    pub rollout_horizon: usize,
    pub rollout_discount: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub similarity_loss_coefficient: f64,
    pub reward_loss_coefficient: f64,
    pub value_loss_coefficient: f64,
    pub intrinsic_reward_coefficient: f64,
    pub target_networks_momentum: f64,
    pub policy_delay: u64,
    pub per_alpha: f64,
    pub per_beta: f64,
    pub replay_buffer_size: usize,
    pub her_k: usize,
    /// Point-mass arena side and minimum start-to-goal distance, in cells.
    pub goal_arena: f64,
    pub goal_min_distance: f64,

    pub mlp_hidden_size: usize,
    pub gru_hidden_size: usize,
    pub encoder_hidden_size: usize,
    pub latent_dimension: usize,

    pub planning_horizon: usize,
    pub horizon_schedule_start: usize,
    pub horizon_schedule_episodes: usize,
    pub iterations: usize,
    pub population_size: usize,
    pub elites: usize,
    pub reduction_factor: f64,
    pub colored_noise_exponent: f64,
    pub initial_mean: f64,
    pub initial_std: f64,
    pub variance_lower_bound_start: f64,
    pub variance_lower_bound_end: f64,
    pub variance_lower_bound_episodes: usize,
    pub fraction_reused_elites: f64,
    pub policy_fraction: f64,
    pub mean_momentum_coefficient: f64,
    pub score_temperature: f64,

    pub greedy_noise: f64,
    /// Episodes between checkpoints (0: only the first and last).
    pub checkpoint_every: usize,
    /// Episodes between value-bias reports (0: never).
    pub bias_every: usize,
    pub bias_states: usize,
    pub bias_rollouts: usize,
    /// Episodes between model-error evaluations on the offline test set
    /// (maze only, 0: never).
    pub model_error_every: usize,
    pub test_set_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Maze,
            maze_file: String::new(),
            variant: Variant::Ace,
            seed: 0,
            total_steps: 15_000,
            episode_length: 300,
            seed_episodes: 5,
            updates_per_step: 1,
            discount: 0.99,
            lambda: 0.8,
            rollout_horizon: 6,
            rollout_discount: 0.5,
            batch_size: 512,
            learning_rate: 1e-3,
            similarity_loss_coefficient: 1.0,
            reward_loss_coefficient: 0.5,
            value_loss_coefficient: 0.1,
            intrinsic_reward_coefficient: 0.5,
            target_networks_momentum: 0.99,
            policy_delay: 2,
            per_alpha: 0.6,
            per_beta: 0.4,
            replay_buffer_size: 1 << 20,
            her_k: 0,
            goal_arena: 4.0,
            goal_min_distance: 2.0,
            mlp_hidden_size: 512,
            gru_hidden_size: 128,
            encoder_hidden_size: 256,
            latent_dimension: 50,
            planning_horizon: 6,
            horizon_schedule_start: 2,
            horizon_schedule_episodes: 5,
            iterations: 6,
            population_size: 256,
            elites: 32,
            reduction_factor: 1.25,
            colored_noise_exponent: 2.5,
            initial_mean: 0.0,
            initial_std: 0.5,
            variance_lower_bound_start: 0.5,
            variance_lower_bound_end: 0.05,
            variance_lower_bound_episodes: 5,
            fraction_reused_elites: 0.25,
            policy_fraction: 0.5,
            mean_momentum_coefficient: 0.1,
            score_temperature: 0.5,
            greedy_noise: 0.1,
            checkpoint_every: 10,
            bias_every: 20,
            bias_states: 20,
            bias_rollouts: 5,
            model_error_every: 5,
            test_set_size: 2000,
        }
    }
}

/// Invokes `$m!(cfg, key…)` with every key, so parsing and printing share
/// one list of names.
macro_rules! for_each_key {
    ($cfg:expr, $m:ident) => {{
        let c = $cfg;
        $m!(c, env, maze_file, variant, seed, total_steps, episode_length, seed_episodes, updates_per_step,
            discount, lambda, rollout_horizon, rollout_discount, batch_size, learning_rate,
            similarity_loss_coefficient, reward_loss_coefficient, value_loss_coefficient,
            intrinsic_reward_coefficient, target_networks_momentum, policy_delay, per_alpha, per_beta,
            replay_buffer_size, her_k, goal_arena, goal_min_distance, mlp_hidden_size, gru_hidden_size, encoder_hidden_size,
            latent_dimension, planning_horizon, horizon_schedule_start, horizon_schedule_episodes,
            iterations, population_size, elites, reduction_factor, colored_noise_exponent,
            initial_mean, initial_std, variance_lower_bound_start, variance_lower_bound_end,
            variance_lower_bound_episodes, fraction_reused_elites, policy_fraction,
            mean_momentum_coefficient, score_temperature, greedy_noise, checkpoint_every,
            bias_every, bias_states, bias_rollouts, model_error_every, test_set_size);
    }};
}

trait Field: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! plain_field {
    ($($t:ty),*) => {$(
        impl Field for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_field!(u64, usize, f64, String);

impl Field for Variant {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn show(&self) -> String {
        self.name().to_string()
    }
}

impl Field for EnvKind {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn show(&self) -> String {
        self.name().to_string()
    }
}

impl RunConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! assign {
            ($c:ident, $($f:ident),*) => {
                match key {
                    $(stringify!($f) => {
                        $c.$f = Field::parse_value(value)
                            .map_err(|e| Error::Invalid(format!("{key} = {value:?}: {e}")))?;
                    })*
                    _ => return Err(Error::Invalid(format!("unknown config key {key:?}"))),
                }
            };
        }
        for_each_key!(self, assign);
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("config line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Invalid(format!("config line {}: duplicate key {k:?}", n + 1)));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `maze_file` is taken relative to the
    /// directory holding the config and stored as an absolute path, so
    /// checkpoints written from the run can be loaded from anywhere.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if !cfg.maze_file.is_empty() && Path::new(&cfg.maze_file).is_relative() {
            if let Some(dir) = path.parent() {
                let joined = dir.join(&cfg.maze_file);
                let resolved = std::fs::canonicalize(&joined).unwrap_or(joined);
                cfg.maze_file = resolved.to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    /// Every key, one per line, in a form [`RunConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        macro_rules! show {
            ($c:ident, $($f:ident),*) => {
                $( writeln!(out, "{} = {}", stringify!($f), Field::show(&$c.$f)).expect("writing to a String"); )*
            };
        }
        for_each_key!(self, show);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.episode_length == 0 {
            return bad("episode_length must be positive");
        }
        if self.batch_size == 0 || self.rollout_horizon == 0 {
            return bad("batch_size and rollout_horizon must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.horizon_schedule_start == 0 || self.planning_horizon == 0 {
            return bad("planning horizons must be positive");
        }
        // Every start has a corner at least 0.7 arena widths away, so the
        // goal draw at reset terminates.
        if !(self.goal_arena > 0.0) || !(0.0..0.7 * self.goal_arena).contains(&self.goal_min_distance) {
            return bad("goal_min_distance must lie in [0, 0.7 * goal_arena)");
        }
        if !(self.greedy_noise >= 0.0) {
            return bad("greedy_noise must be non-negative");
        }
        self.agent_config(1, 1).validate()?;
        self.learner_config().targets.validate()?;
        self.planner_config().validate()?;
        if self.replay_buffer_size == 0 || !(self.per_alpha >= 0.0) || !(0.0..=1.0).contains(&self.per_beta) {
            return bad("replay needs a positive size, per_alpha ≥ 0 and per_beta in [0, 1]");
        }
        Ok(())
    }

    /// `c_r` after the variant is applied: the blind baseline never sees
    /// intrinsic reward.
    pub fn effective_intrinsic(&self) -> f64 {
        if self.variant == Variant::AceBlind {
            0.0
        } else {
            self.intrinsic_reward_coefficient
        }
    }

    pub fn agent_config(&self, obs_dim: usize, action_dim: usize) -> AgentConfig {
        AgentConfig {
            latent_dim: self.latent_dimension,
            encoder_hidden: self.encoder_hidden_size,
            mlp_hidden: self.mlp_hidden_size,
            gru_hidden: self.gru_hidden_size,
            ..AgentConfig::new(obs_dim, action_dim)
        }
    }

    pub fn learner_config(&self) -> LearnerConfig {
        let opt = AdamWConfig {
            lr: self.learning_rate,
            ..AdamWConfig::default()
        };
        LearnerConfig {
            targets: ValueTargetConfig {
                gamma: self.discount,
                lambda: self.lambda,
                horizon: self.rollout_horizon,
                c_r: self.effective_intrinsic(),
                rho: self.rollout_discount,
                c1: self.similarity_loss_coefficient,
                c2: self.reward_loss_coefficient,
                c3: self.value_loss_coefficient,
            },
            optimizer: opt,
            policy_optimizer: opt,
            policy_delay: self.policy_delay,
            target_momentum: self.target_networks_momentum,
            normalizer: NormalizerConfig::default(),
            target_kind: TargetKind::Lambda,
        }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            horizon: Schedule {
                start: self.horizon_schedule_start as f64,
                end: self.planning_horizon as f64,
                episodes: self.horizon_schedule_episodes,
            },
            iterations: self.iterations,
            population: self.population_size,
            elites: self.elites,
            decay: self.reduction_factor,
            noise_beta: self.colored_noise_exponent,
            temperature: self.score_temperature,
            init_mean: self.initial_mean,
            init_std: self.initial_std,
            std_floor: Schedule {
                start: self.variance_lower_bound_start,
                end: self.variance_lower_bound_end,
                episodes: self.variance_lower_bound_episodes,
            },
            elite_fraction: self.fraction_reused_elites,
            policy_fraction: self.policy_fraction,
            mean_momentum: self.mean_momentum_coefficient,
            gamma: self.discount,
            use_terminal_value: self.variant != Variant::IcemNoValue,
            noise_scale_variance: false,
        }
    }

    pub fn replay_config(&self) -> ReplayConfig {
        ReplayConfig {
            segment_len: self.rollout_horizon + 1,
            capacity: self.replay_buffer_size,
            alpha: self.per_alpha,
            beta: self.per_beta,
            ..ReplayConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_defaults() {
        let c = RunConfig::default();
        assert_eq!((c.population_size, c.elites, c.iterations), (256, 32, 6));
        assert_eq!((c.batch_size, c.seed_episodes, c.policy_delay), (512, 5, 2));
        assert_eq!(c.planner_config().horizon.steps(0), 2);
        assert_eq!(c.planner_config().horizon.steps(4), 6);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.variant = Variant::IcemNoValue;
        c.env = EnvKind::PointMassSparse;
        c.learning_rate = 3e-4;
        c.maze_file = "m.txt".into();
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed_keys() {
        assert!(RunConfig::parse("populaton_size = 3").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed 1").is_err());
        assert!(RunConfig::parse("seed = one").is_err());
        assert!(RunConfig::parse("elites = 200").is_err());
        assert!(RunConfig::parse("goal_min_distance = 3").is_err());
        assert!(RunConfig::parse("goal_arena = 10\ngoal_min_distance = 5").is_ok());
        let c = RunConfig::parse("# desk run\nseed = 7  # trailing\n\nvariant = greedy\n").unwrap();
        assert_eq!((c.seed, c.variant), (7, Variant::Greedy));
    }

    #[test]
    fn variants_shape_the_sub_configs() {
        let mut c = RunConfig::default();
        c.variant = Variant::AceBlind;
        assert_eq!(c.learner_config().targets.c_r, 0.0);
        c.variant = Variant::IcemNoValue;
        assert!(!c.planner_config().use_terminal_value);
        assert_eq!(c.learner_config().targets.c_r, 0.5);
    }
}
