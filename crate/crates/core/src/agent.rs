//! Latent world model, critic and policy.
//!
//! Networks and their parameter prefixes:
//!
//! | prefix | role | shape |
//! |--------|------|-------|
//! | `enc`  | encoder `h` | obs → hidden (LN, ELU) → latent |
//! | `gru`  | recurrent core `f` | (z ⊕ a, b) → b′ |
//! | `proj` | projector `g` | b′ → hidden (BN, ELU) → z′ |
//! | `pred` | predictor `q` | z′ → hidden (BN, ELU) → latent |
//! | `rew`  | reward head | z ⊕ a ⊕ b → 1 |
//! | `q`, `q2` | critic(s) | z ⊕ a → 1 (LN) |
//! | `pi`   | deterministic policy | z → tanh → action box |
//!
//! Target copies of `enc` and the critics live in [`Agent::target`].

use rand::{Rng, SeedableRng};

use crate::error::{shape_err, Error, Result};
use crate::nn::{apply_stat_updates, Activation, Graph, GruCell, Mlp, Mode, Norm, ParamSet, Source, StatUpdate, Tensor, Var};
use crate::planner::PlanningModel;
use crate::scalar::Scalar;
use crate::segment::SegmentBatch;

pub const L2_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub mlp_hidden: usize,
    pub gru_hidden: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub twin_critic: bool,
}

impl AgentConfig {
    /// Full-size networks for an `obs_dim`-dimensional task with actions in
    /// `[-1, 1]^action_dim`.
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            latent_dim: 50,
            encoder_hidden: 256,
            mlp_hidden: 512,
            gru_hidden: 128,
            action_low: vec![-1.0; action_dim],
            action_high: vec![1.0; action_dim],
            twin_critic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.obs_dim,
            self.action_dim,
            self.latent_dim,
            self.encoder_hidden,
            self.mlp_hidden,
            self.gru_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Invalid("network widths must be positive".into()));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::Invalid("action bounds do not match action_dim".into()));
        }
        if self.action_low.iter().zip(&self.action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::Invalid("action box must have low < high".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Networks {
    enc: Mlp,
    gru: GruCell,
    proj: Mlp,
    pred: Mlp,
    rew: Mlp,
    critic: Mlp,
    policy: Mlp,
}

impl Networks {
    fn new(c: &AgentConfig) -> Self {
        let (z, a, b, w) = (c.latent_dim, c.action_dim, c.gru_hidden, c.mlp_hidden);
        Self {
            enc: Mlp::new(vec![c.obs_dim, c.encoder_hidden, z], Activation::Elu, Norm::Layer),
            gru: GruCell {
                input: z + a,
                hidden: b,
                layer_norm: true,
            },
            proj: Mlp::new(vec![b, w, z], Activation::Elu, Norm::Batch),
            pred: Mlp::new(vec![z, w, z], Activation::Elu, Norm::Batch),
            rew: Mlp::new(vec![z + a + b, w, w, 1], Activation::Elu, Norm::None),
            critic: Mlp::new(vec![z + a, w, w, 1], Activation::Elu, Norm::Layer),
            policy: Mlp::new(vec![z, w, w, a], Activation::Elu, Norm::None).with_output(Activation::Tanh),
        }
    }
}

/// Output of one latent transition.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub z: Var,
    pub b: Var,
    pub r: Var,
}

/// Tape handles for a multi-step latent rollout over a [`SegmentBatch`].
#[derive(Clone, Debug)]
pub struct Rollout {
    /// `ẑ_0 … ẑ_L`, with `ẑ_0 = h(s_0)`.
    pub z: Vec<Var>,
    /// `b_0 … b_L`, with `b_0 = 0`.
    pub b: Vec<Var>,
    /// Predicted external rewards, one `B × 1` column per step.
    pub r_hat: Vec<Var>,
    /// Per-sample latent consistency error, `‖q̂ − ŷ‖²`, `B × 1`.
    pub ld: Vec<Var>,
    /// Per-sample squared reward error, `B × 1`.
    pub lr: Vec<Var>,
}

/// Scalar summary of the model loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelLoss {
    pub total: f64,
    pub ld: Vec<f64>,
    pub lr: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Agent<T: Scalar> {
    pub config: AgentConfig,
    nets: Networks,
    pub params: ParamSet<T>,
    pub target: ParamSet<T>,
    pub stats: ParamSet<T>,
    center: Tensor<T>,
    half: Tensor<T>,
}

fn is_target_name(name: &str) -> bool {
    name.starts_with("enc.") || name.starts_with("q.") || name.starts_with("q2.")
}

impl<T: Scalar> Agent<T> {
    pub fn new<R: Rng>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let nets = Networks::new(&config);
        let mut params = ParamSet::new();
        let mut stats = ParamSet::new();
        nets.enc.init("enc", rng, &mut params, &mut stats)?;
        nets.gru.init("gru", rng, &mut params)?;
        nets.proj.init("proj", rng, &mut params, &mut stats)?;
        nets.pred.init("pred", rng, &mut params, &mut stats)?;
        nets.rew.init("rew", rng, &mut params, &mut stats)?;
        nets.critic.init("q", rng, &mut params, &mut stats)?;
        if config.twin_critic {
            nets.critic.init("q2", rng, &mut params, &mut stats)?;
        }
        nets.policy.init("pi", rng, &mut params, &mut stats)?;
        let target = Self::target_view(&params);
        let center = Tensor::row(
            config
                .action_low
                .iter()
                .zip(&config.action_high)
                .map(|(l, h)| T::of(0.5 * (l + h)))
                .collect(),
        );
        let half = Tensor::row(
            config
                .action_low
                .iter()
                .zip(&config.action_high)
                .map(|(l, h)| T::of(0.5 * (h - l)))
                .collect(),
        );
        Ok(Self {
            config,
            nets,
            params,
            target,
            stats,
            center,
            half,
        })
    }

    /// Rebuilds an agent around externally supplied tensors (e.g. from a
    /// checkpoint), checking every name and shape.
    pub fn from_parts(config: AgentConfig, params: ParamSet<T>, target: ParamSet<T>, stats: ParamSet<T>) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut a = Self::new(config, &mut rng)?;
        a.params.check_compatible(&params)?;
        a.target.check_compatible(&target)?;
        a.stats.check_compatible(&stats)?;
        a.params = params;
        a.target = target;
        a.stats = stats;
        Ok(a)
    }

    fn target_view(params: &ParamSet<T>) -> ParamSet<T> {
        let mut t = ParamSet::new();
        for (n, v) in params.iter().filter(|(n, _)| is_target_name(n)) {
            t.insert(n, v.clone()).expect("unique");
        }
        t
    }

    /// Names touched by the policy optimizer.
    pub fn is_policy_param(name: &str) -> bool {
        name.starts_with("pi.")
    }

    pub fn critic_prefixes(&self) -> &'static [&'static str] {
        if self.config.twin_critic {
            &["q", "q2"]
        } else {
            &["q"]
        }
    }

    pub fn online(&self) -> Source<'_, T> {
        Source::trainable(&self.params, &self.stats)
    }

    pub fn online_frozen(&self) -> Source<'_, T> {
        Source::frozen(&self.params, &self.stats)
    }

    pub fn target_source(&self) -> Source<'_, T> {
        Source::frozen(&self.target, &self.stats)
    }

    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>]) {
        apply_stat_updates(&mut self.stats, updates, T::of(crate::nn::layers::BATCH_NORM_MOMENTUM));
    }

    // ---- graph builders -------------------------------------------------

    pub fn encode_var<'p>(&self, g: &mut Graph<'p, T>, src: Source<'p, T>, obs: Var) -> Result<Var> {
        let w = g.value(obs).cols();
        if w != self.config.obs_dim {
            return Err(shape_err("encode", format!("observation width {w}, expected {}", self.config.obs_dim)));
        }
        self.nets.enc.forward(g, src, "enc", obs)
    }

    /// `b′ = f(ẑ ⊕ a, b)`, `ẑ′ = g(b′)`, `r̂ = r(ẑ ⊕ a ⊕ b)`.
    pub fn step_var<'p>(&self, g: &mut Graph<'p, T>, src: Source<'p, T>, z: Var, a: Var, b: Var) -> Result<StepVars> {
        let za = g.concat(&[z, a]);
        let b_next = self.nets.gru.forward(g, src, "gru", za, b)?;
        let z_next = self.nets.proj.forward(g, src, "proj", b_next)?;
        let zab = g.concat(&[z, a, b]);
        let r = self.nets.rew.forward(g, src, "rew", zab)?;
        Ok(StepVars {
            z: z_next,
            b: b_next,
            r,
        })
    }

    pub fn predict_var<'p>(&self, g: &mut Graph<'p, T>, src: Source<'p, T>, z: Var) -> Result<Var> {
        self.nets.pred.forward(g, src, "pred", z)
    }

    pub fn critic_var<'p>(&self, g: &mut Graph<'p, T>, src: Source<'p, T>, prefix: &str, z: Var, a: Var) -> Result<Var> {
        let za = g.concat(&[z, a]);
        self.nets.critic.forward(g, src, prefix, za)
    }

    pub fn policy_var<'p>(&'p self, g: &mut Graph<'p, T>, src: Source<'p, T>, z: Var) -> Result<Var> {
        let t = self.nets.policy.forward(g, src, "pi", z)?;
        let half = g.constant_ref(&self.half);
        let center = g.constant_ref(&self.center);
        let scaled = g.mul_row(t, half);
        Ok(g.add_row(scaled, center))
    }

    /// Unrolls the model from `ẑ_0 = h(s_0)` along the real actions, with
    /// consistency targets from the frozen encoder `target`.
    pub fn rollout_var<'p>(
        &self,
        g: &mut Graph<'p, T>,
        online: Source<'p, T>,
        target: Source<'p, T>,
        batch: &'p SegmentBatch<T>,
    ) -> Result<Rollout> {
        let n = batch.batch_size();
        let s0 = g.constant_ref(&batch.obs[0]);
        let z0 = self.encode_var(g, online, s0)?;
        let b0 = g.constant(Tensor::zeros(&[n, self.config.gru_hidden]));
        let mut out = Rollout {
            z: vec![z0],
            b: vec![b0],
            r_hat: Vec::new(),
            ld: Vec::new(),
            lr: Vec::new(),
        };
        for i in 0..batch.len() {
            let a = g.constant_ref(&batch.actions[i]);
            let st = self.step_var(g, online, out.z[i], a, out.b[i])?;
            let p = self.predict_var(g, online, st.z)?;
            let p = g.l2_normalize(p, T::of(L2_EPS));
            let s_next = g.constant_ref(&batch.obs[i + 1]);
            let y = self.encode_var(g, target, s_next)?;
            let y = g.l2_normalize(y, T::of(L2_EPS));
            let y = g.detach(y);
            let d = g.sub(p, y);
            let d2 = g.square(d);
            out.ld.push(g.sum_rows(d2));
            let r = g.constant(Tensor::from_rows(n, 1, batch.rewards[i].clone()));
            let e = g.sub(st.r, r);
            out.lr.push(g.square(e));
            out.r_hat.push(st.r);
            out.z.push(st.z);
            out.b.push(st.b);
        }
        Ok(out)
    }

    /// `Σ_i mean_b(c1·L_d,i + c2·L_r,i)` on a fresh train-mode tape, plus
    /// per-step batch means of each term.
    pub fn model_loss(&self, batch: &SegmentBatch<T>, c1: f64, c2: f64) -> Result<ModelLoss> {
        let mut g = Graph::new(Mode::Train);
        let ro = self.rollout_var(&mut g, self.online_frozen(), self.target_source(), batch)?;
        let mean = |g: &Graph<'_, T>, v: Var| g.value(v).data().iter().map(|x| x.f64()).sum::<f64>() / batch.batch_size() as f64;
        let ld: Vec<f64> = ro.ld.iter().map(|&v| mean(&g, v)).collect();
        let lr: Vec<f64> = ro.lr.iter().map(|&v| mean(&g, v)).collect();
        g.ensure_finite()?;
        let total = ld.iter().zip(&lr).map(|(d, r)| c1 * d + c2 * r).sum();
        Ok(ModelLoss { total, ld, lr })
    }

    // ---- eval helpers ---------------------------------------------------

    fn eval<'s, R>(&'s self, f: impl FnOnce(&mut Graph<'s, T>) -> Result<R>) -> Result<R> {
        let mut g = Graph::new(Mode::Eval);
        let out = f(&mut g)?;
        g.ensure_finite()?;
        Ok(out)
    }

    fn take(g: &Graph<'_, T>, v: Var) -> Tensor<T> {
        g.value(v).clone()
    }

    pub fn encode(&self, obs: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval(|g| {
            let x = g.constant(obs.clone());
            let z = self.encode_var(g, self.online_frozen(), x)?;
            Ok(Self::take(g, z))
        })
    }

    pub fn encode_target(&self, obs: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval(|g| {
            let x = g.constant(obs.clone());
            let z = self.encode_var(g, self.target_source(), x)?;
            Ok(Self::take(g, z))
        })
    }

    /// Batched latent transition: returns `(ẑ′, b′, r̂)` with `r̂` as a vector.
    pub fn dynamics_step(&self, z: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
        self.check_width("dynamics_step", z, self.config.latent_dim)?;
        self.check_width("dynamics_step", a, self.config.action_dim)?;
        self.check_width("dynamics_step", b, self.config.gru_hidden)?;
        self.eval(|g| {
            let (zv, av, bv) = (g.constant(z.clone()), g.constant(a.clone()), g.constant(b.clone()));
            let st = self.step_var(g, self.online_frozen(), zv, av, bv)?;
            Ok((Self::take(g, st.z), Self::take(g, st.b), g.value(st.r).data().to_vec()))
        })
    }

    pub fn policy_action(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_width("policy_action", z, self.config.latent_dim)?;
        self.eval(|g| {
            let zv = g.constant(z.clone());
            let a = self.policy_var(g, self.online_frozen(), zv)?;
            Ok(Self::take(g, a))
        })
    }

    pub fn q_value(&self, z: &Tensor<T>, a: &Tensor<T>) -> Result<Vec<T>> {
        self.eval(|g| {
            let (zv, av) = (g.constant(z.clone()), g.constant(a.clone()));
            let q = self.critic_var(g, self.online_frozen(), "q", zv, av)?;
            Ok(g.value(q).data().to_vec())
        })
    }

    /// `Q(ẑ, π(ẑ))` with the online critic.
    pub fn terminal_value(&self, z: &Tensor<T>) -> Result<Vec<T>> {
        self.eval(|g| {
            let zv = g.constant(z.clone());
            let a = self.policy_var(g, self.online_frozen(), zv)?;
            let q = self.critic_var(g, self.online_frozen(), "q", zv, a)?;
            Ok(g.value(q).data().to_vec())
        })
    }

    fn check_width(&self, op: &'static str, t: &Tensor<T>, w: usize) -> Result<()> {
        if t.cols() != w {
            return Err(shape_err(op, format!("width {}, expected {w}", t.cols())));
        }
        Ok(())
    }

    pub fn sync_target(&mut self) {
        self.target = Self::target_view(&self.params);
    }
}

/// Latent batch carried through planning.
#[derive(Clone, Debug)]
pub struct LatentBatch<T> {
    pub z: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Agent<T> {
    /// Planning root for a raw observation: `z = h(s)`, `b = 0`.
    pub fn root(&self, obs: &[f64]) -> Result<LatentBatch<T>> {
        let x = Tensor::row(obs.iter().map(|&v| T::of(v)).collect());
        Ok(LatentBatch {
            z: self.encode(&x)?,
            b: Tensor::zeros(&[1, self.config.gru_hidden]),
        })
    }
}

fn tile<T: Scalar>(t: &Tensor<T>, n: usize) -> Tensor<T> {
    let row = t.row_slice(0);
    let mut data = Vec::with_capacity(n * row.len());
    for _ in 0..n {
        data.extend_from_slice(row);
    }
    Tensor::from_rows(n, row.len(), data)
}

impl<T: Scalar> PlanningModel for Agent<T> {
    type State = LatentBatch<T>;

    fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.config.action_low.clone(), self.config.action_high.clone())
    }

    fn broadcast(&self, root: &LatentBatch<T>, n: usize) -> Result<LatentBatch<T>> {
        Ok(LatentBatch {
            z: tile(&root.z, n),
            b: tile(&root.b, n),
        })
    }

    fn step(&self, s: &LatentBatch<T>, actions: &[f64]) -> Result<(LatentBatch<T>, Vec<f64>)> {
        let n = s.z.rows();
        let a = Tensor::from_rows(n, self.config.action_dim, actions.iter().map(|&v| T::of(v)).collect());
        let (z, b, r) = self.dynamics_step(&s.z, &a, &s.b)?;
        Ok((LatentBatch { z, b }, r.into_iter().map(|v| v.f64()).collect()))
    }

    fn terminal_value(&self, s: &LatentBatch<T>) -> Result<Vec<f64>> {
        Ok(Agent::terminal_value(self, &s.z)?.into_iter().map(|v| v.f64()).collect())
    }

    fn policy(&self, s: &LatentBatch<T>) -> Result<Vec<f64>> {
        Ok(self.policy_action(&s.z)?.into_data().into_iter().map(|v| v.f64()).collect())
    }
}

/// Squared distance between two rows after ℓ2 normalization.
pub fn normalized_sq_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    let eps = T::of(L2_EPS);
    let na = a.iter().map(|&v| v * v).sum::<T>().sqrt() + eps;
    let nb = b.iter().map(|&v| v * v).sum::<T>().sqrt() + eps;
    a.iter().zip(b).map(|(&x, &y)| (x / na - y / nb).powi(2)).sum()
}
