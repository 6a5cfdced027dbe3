//! One joint model/critic/policy update on a batch of segments.

use crate::agent::{Agent, Rollout};
use crate::error::{Error, Result};
use crate::intrinsic::{raw_errors, IntrinsicBatch, NormalizerConfig, RewardNormalizer};
use crate::nn::{ema_update, AdamW, AdamWConfig, Graph, Mode, ParamSet, Source, Tensor, Var};
use crate::scalar::Scalar;
use crate::segment::SegmentBatch;

use super::targets::{qlambda_target, tdk_targets, ValueTargetConfig};

/// Which bootstrap loss trains the critic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    /// λ-mixture of real-reward k-step targets.
    Lambda,
    /// Model-rollout H-step Bellman error with predicted rewards.
    TdK,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub targets: ValueTargetConfig,
    pub optimizer: AdamWConfig,
    pub policy_optimizer: AdamWConfig,
    pub policy_delay: u64,
    pub target_momentum: f64,
    pub normalizer: NormalizerConfig,
    pub target_kind: TargetKind,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            targets: ValueTargetConfig::default(),
            optimizer: AdamWConfig::default(),
            policy_optimizer: AdamWConfig::default(),
            policy_delay: 2,
            target_momentum: 0.99,
            normalizer: NormalizerConfig::default(),
            target_kind: TargetKind::Lambda,
        }
    }
}

/// Constants computed before the differentiable pass. Indexed `[step][sample]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    /// Target value of each state, `len + 1` rows.
    pub bootstrap: Vec<Vec<f64>>,
    pub intrinsic: Vec<Vec<f64>>,
    /// `r^e + c_r·r^i`.
    pub joint_rewards: Vec<Vec<f64>>,
    /// Critic regression targets (λ-targets; empty for TD-K).
    pub q_lambda: Vec<Vec<f64>>,
    pub intrinsic_batch: Option<IntrinsicBatch>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub total: f64,
    pub ld: f64,
    pub lr: f64,
    pub l_value: f64,
    pub j_pi: Option<f64>,
    pub mean_q: f64,
    pub mean_target: f64,
    pub intrinsic_mean: f64,
    pub intrinsic_std: f64,
    pub intrinsic_fraction_clipped: f64,
    pub intrinsic_max_raw: f64,
    pub mean_intrinsic_reward: f64,
    /// New priority per segment: mean |Q − target| over steps.
    pub priorities: Vec<f64>,
}

/// Tape handles produced by [`joint_loss`].
pub struct JointLoss {
    pub total: Var,
    pub rollout: Rollout,
    pub q: Vec<Var>,
    pub targets: Vec<Vec<f64>>,
    pub ld: f64,
    pub lr: f64,
    pub l_value: f64,
}

fn col<T: Scalar>(v: &[f64]) -> Tensor<T> {
    Tensor::from_rows(v.len(), 1, v.iter().map(|&x| T::of(x)).collect())
}

fn mean_of<T: Scalar>(g: &Graph<'_, T>, v: Var) -> f64 {
    let t = g.value(v);
    t.data().iter().map(|x| x.f64()).sum::<f64>() / t.len() as f64
}

/// Target critic value `Q′(h(s), π(h(s)))` of every state in the batch,
/// with the online encoder and policy. Twin critics take the minimum.
pub fn bootstrap_values<T: Scalar>(agent: &Agent<T>, batch: &SegmentBatch<T>) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(batch.obs.len());
    for obs in &batch.obs {
        let mut g = Graph::new(Mode::Eval);
        let s = g.constant_ref(obs);
        let z = agent.encode_var(&mut g, agent.online_frozen(), s)?;
        let a = agent.policy_var(&mut g, agent.online_frozen(), z)?;
        let mut best: Option<Vec<f64>> = None;
        for prefix in agent.critic_prefixes() {
            let q = agent.critic_var(&mut g, agent.target_source(), prefix, z, a)?;
            let v: Vec<f64> = g.value(q).data().iter().map(|x| x.f64()).collect();
            best = Some(match best {
                None => v,
                Some(b) => b.iter().zip(&v).map(|(x, y)| x.min(*y)).collect(),
            });
        }
        g.ensure_finite()?;
        out.push(best.expect("at least one critic"));
    }
    Ok(out)
}

/// Raw one-step novelty of each transition, `[step][sample]`, using batch
/// statistics over all `len × B` transitions.
pub fn raw_intrinsic<T: Scalar>(agent: &Agent<T>, batch: &SegmentBatch<T>) -> Result<Vec<Vec<f64>>> {
    let (l, b) = (batch.len(), batch.batch_size());
    let stack = |ts: &[Tensor<T>]| {
        let w = ts[0].cols();
        let mut data = Vec::with_capacity(ts.len() * b * w);
        for t in ts {
            data.extend_from_slice(t.data());
        }
        Tensor::from_rows(ts.len() * b, w, data)
    };
    let obs = stack(&batch.obs[..l]);
    let next = stack(&batch.obs[1..]);
    let act = stack(&batch.actions);
    let flat = raw_errors(agent, &obs, &act, &next, Mode::Train)?;
    Ok(flat.chunks(b).map(|c| c.to_vec()).collect())
}

/// λ-targets `[i][b]` for every transition of every segment.
pub fn lambda_targets<T: Scalar>(
    cfg: &ValueTargetConfig,
    batch: &SegmentBatch<T>,
    joint_rewards: &[Vec<f64>],
    bootstrap: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let (l, nb) = (batch.len(), batch.batch_size());
    let end = l - 1;
    let mut out = vec![vec![0.0; nb]; l];
    for b in 0..nb {
        let r: Vec<f64> = (0..l).map(|i| joint_rewards[i][b]).collect();
        let d: Vec<bool> = (0..l).map(|i| batch.dones[i][b]).collect();
        let v: Vec<f64> = (0..=l).map(|j| bootstrap[j][b]).collect();
        for (i, row) in out.iter_mut().enumerate() {
            row[b] = qlambda_target(&r, &d, &v, cfg.gamma, cfg.lambda, cfg.horizon, end, i)?;
        }
    }
    Ok(out)
}

/// All constants for one update. `normalizer = None` disables the
/// intrinsic term entirely.
pub fn prepare<T: Scalar>(
    agent: &Agent<T>,
    batch: &SegmentBatch<T>,
    cfg: &ValueTargetConfig,
    kind: TargetKind,
    normalizer: Option<&mut RewardNormalizer>,
) -> Result<Prepared> {
    let (l, nb) = (batch.len(), batch.batch_size());
    let bootstrap = bootstrap_values(agent, batch)?;
    let (intrinsic, intrinsic_batch) = match normalizer {
        Some(n) if cfg.c_r > 0.0 => {
            let raw = raw_intrinsic(agent, batch)?;
            let flat: Vec<f64> = raw.iter().flatten().copied().collect();
            let ib = n.normalize_batch(&flat)?;
            let per_step = ib.rewards.chunks(nb).map(|c| c.to_vec()).collect();
            (per_step, Some(ib))
        }
        _ => (vec![vec![0.0; nb]; l], None),
    };
    let joint_rewards: Vec<Vec<f64>> = (0..l)
        .map(|i| (0..nb).map(|b| batch.rewards[i][b].f64() + cfg.c_r * intrinsic[i][b]).collect())
        .collect();
    let q_lambda = match kind {
        TargetKind::Lambda => lambda_targets(cfg, batch, &joint_rewards, &bootstrap)?,
        TargetKind::TdK => Vec::new(),
    };
    Ok(Prepared {
        bootstrap,
        intrinsic,
        joint_rewards,
        q_lambda,
        intrinsic_batch,
    })
}

/// Builds `(1/H) · mean_b Σ_i ρ^i w_b (c1·L_d + c2·L_r + c3·L_v)` on `g`.
pub fn joint_loss<'p, T: Scalar>(
    agent: &'p Agent<T>,
    g: &mut Graph<'p, T>,
    online: Source<'p, T>,
    batch: &'p SegmentBatch<T>,
    prepared: &Prepared,
    cfg: &ValueTargetConfig,
    kind: TargetKind,
) -> Result<JointLoss> {
    let (l, nb) = (batch.len(), batch.batch_size());
    let ro = agent.rollout_var(g, online, agent.target_source(), batch)?;
    let mut q = Vec::with_capacity(l);
    let mut per_critic: Vec<Vec<Var>> = Vec::new();
    for prefix in agent.critic_prefixes() {
        let mut qs = Vec::with_capacity(l);
        for i in 0..l {
            let a = g.constant_ref(&batch.actions[i]);
            qs.push(agent.critic_var(g, online, prefix, ro.z[i], a)?);
        }
        per_critic.push(qs);
    }
    q.extend_from_slice(&per_critic[0]);

    let targets = match kind {
        TargetKind::Lambda => prepared.q_lambda.clone(),
        TargetKind::TdK => tdk_rollout_targets(agent, g, &ro, prepared, cfg, nb)?,
    };
    let rows = targets.len();
    let weights = g.constant(col(&batch.weights.iter().map(|w| w.f64()).collect::<Vec<_>>()));
    let mut acc: Option<Var> = None;
    let (mut sd, mut sr, mut sv) = (0.0, 0.0, 0.0);
    let mut rho_i = 1.0;
    for i in 0..l {
        let mut term = g.scale(ro.ld[i], T::of(cfg.c1));
        let lr = g.scale(ro.lr[i], T::of(cfg.c2));
        term = g.add(term, lr);
        sd += mean_of(g, ro.ld[i]);
        sr += mean_of(g, ro.lr[i]);
        if i < rows {
            let y = g.constant(col(&targets[i]));
            for qs in &per_critic {
                let e = g.sub(qs[i], y);
                let e2 = g.square(e);
                sv += mean_of(g, e2);
                let lv = g.scale(e2, T::of(cfg.c3));
                term = g.add(term, lv);
            }
        }
        let weighted = g.mul(term, weights);
        let step = g.scale(weighted, T::of(rho_i));
        acc = Some(match acc {
            None => step,
            Some(a) => g.add(a, step),
        });
        rho_i *= cfg.rho;
    }
    let sum = g.sum(acc.expect("segments are non-empty"));
    let total = g.scale(sum, T::of(1.0 / (cfg.horizon as f64 * nb as f64)));
    Ok(JointLoss {
        total,
        rollout: ro,
        q,
        targets,
        ld: sd,
        lr: sr,
        l_value: sv / cfg.horizon as f64,
    })
}

/// H-step targets from the model's own rollout: predicted rewards
/// (plus the intrinsic bonus) and the target critic at the last latent.
fn tdk_rollout_targets<'p, T: Scalar>(
    agent: &'p Agent<T>,
    g: &mut Graph<'p, T>,
    ro: &Rollout,
    prepared: &Prepared,
    cfg: &ValueTargetConfig,
    nb: usize,
) -> Result<Vec<Vec<f64>>> {
    let h = cfg.horizon.min(ro.r_hat.len());
    let zh = g.detach(ro.z[h]);
    let a = agent.policy_var(g, agent.online_frozen(), zh)?;
    let qt = agent.critic_var(g, agent.target_source(), "q", zh, a)?;
    let qt: Vec<f64> = g.value(qt).data().iter().map(|x| x.f64()).collect();
    let mut out = vec![vec![0.0; nb]; h];
    for b in 0..nb {
        let r: Vec<f64> = (0..h)
            .map(|i| g.value(ro.r_hat[i]).data()[b].f64() + cfg.c_r * prepared.intrinsic[i][b])
            .collect();
        for (i, y) in tdk_targets(&r, qt[b], cfg.gamma).into_iter().enumerate() {
            out[i][b] = y;
        }
    }
    Ok(out)
}

/// `−(1/H) · mean Σ_i Q(ẑ_i, π(ẑ_i))` over detached latents, critic frozen.
pub fn policy_loss<'p, T: Scalar>(agent: &'p Agent<T>, g: &mut Graph<'p, T>, latents: Tensor<T>, horizon: usize, batch: usize) -> Result<Var> {
    let z = g.constant(latents);
    let a = agent.policy_var(g, agent.online(), z)?;
    let q = agent.critic_var(g, agent.online_frozen(), "q", z, a)?;
    let s = g.sum(q);
    Ok(g.scale(s, T::of(-1.0 / (horizon as f64 * batch as f64))))
}

/// Optimizer state and counters for the update loop.
#[derive(Clone, Debug)]
pub struct Learner<T: Scalar> {
    pub config: LearnerConfig,
    opt: AdamW<T>,
    pi_opt: AdamW<T>,
    pub normalizer: RewardNormalizer,
    pub iterations: u64,
    pub optimizer_steps: u64,
    pub policy_steps: u64,
}

impl<T: Scalar> Learner<T> {
    pub fn new(agent: &Agent<T>, config: LearnerConfig) -> Result<Self> {
        config.targets.validate()?;
        if config.policy_delay == 0 {
            return Err(Error::Invalid("policy delay must be at least 1".into()));
        }
        let model = agent.params.filter(|n| !Agent::<T>::is_policy_param(n));
        let policy = agent.params.filter(Agent::<T>::is_policy_param);
        Ok(Self {
            opt: AdamW::new(&model, config.optimizer),
            pi_opt: AdamW::new(&policy, config.policy_optimizer),
            normalizer: RewardNormalizer::new(config.normalizer),
            config,
            iterations: 0,
            optimizer_steps: 0,
            policy_steps: 0,
        })
    }

    pub fn update(&mut self, agent: &mut Agent<T>, batch: &SegmentBatch<T>) -> Result<UpdateStats> {
        let cfg = self.config.targets;
        let kind = self.config.target_kind;
        let (l, nb) = (batch.len(), batch.batch_size());
        let prepared = prepare(agent, batch, &cfg, kind, Some(&mut self.normalizer))?;
        let do_policy = (self.iterations + 1) % self.config.policy_delay == 0;

        let (grads, pi_grads, stats_up, mut st) = {
            let agent_ref: &Agent<T> = agent;
            let mut g = Graph::new(Mode::Train);
            let jl = joint_loss(agent_ref, &mut g, agent_ref.online(), batch, &prepared, &cfg, kind)?;
            let grads = g.backward(jl.total, &agent_ref.params)?;
            let mut st = UpdateStats {
                total: g.value(jl.total).item().f64(),
                ld: jl.ld,
                lr: jl.lr,
                l_value: jl.l_value,
                ..Default::default()
            };
            let rows = jl.targets.len();
            let mut pri = vec![0.0; nb];
            let (mut sq, mut sy) = (0.0, 0.0);
            for i in 0..rows {
                let qv = g.value(jl.q[i]).data();
                for b in 0..nb {
                    let (qb, yb) = (qv[b].f64(), jl.targets[i][b]);
                    pri[b] += (qb - yb).abs() / rows as f64;
                    sq += qb;
                    sy += yb;
                }
            }
            st.mean_q = sq / (rows * nb) as f64;
            st.mean_target = sy / (rows * nb) as f64;
            st.priorities = pri;
            let pi_grads = if do_policy {
                let zc = agent_ref.config.latent_dim;
                let mut data = Vec::with_capacity(l * nb * zc);
                for i in 0..l {
                    data.extend_from_slice(g.value(jl.rollout.z[i]).data());
                }
                let latents = Tensor::from_rows(l * nb, zc, data);
                let mut gp = Graph::new(Mode::Train);
                let jp = policy_loss(agent_ref, &mut gp, latents, cfg.horizon, nb)?;
                st.j_pi = Some(gp.value(jp).item().f64());
                Some(gp.backward(jp, &agent_ref.params)?)
            } else {
                None
            };
            let up = g.take_stat_updates();
            (grads, pi_grads, up, st)
        };

        let model_grads = grads.filter(|n| !Agent::<T>::is_policy_param(n));
        self.opt.step(&mut agent.params, &model_grads)?;
        self.optimizer_steps += 1;
        if let Some(pg) = pi_grads {
            let pg = pg.filter(Agent::<T>::is_policy_param);
            self.pi_opt.step(&mut agent.params, &pg)?;
            self.policy_steps += 1;
        }
        agent.apply_stat_updates(&stats_up);
        let online_view: ParamSet<T> = agent.params.filter(|n| agent.target.contains(n));
        ema_update(&mut agent.target, &online_view, T::of(self.config.target_momentum))?;
        self.iterations += 1;

        if let Some(ib) = &prepared.intrinsic_batch {
            st.intrinsic_mean = ib.mean;
            st.intrinsic_std = ib.std;
            st.intrinsic_fraction_clipped = ib.fraction_clipped;
            st.intrinsic_max_raw = ib.max_raw;
            st.mean_intrinsic_reward = ib.rewards.iter().sum::<f64>() / ib.rewards.len().max(1) as f64;
        }
        Ok(st)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::segment::TrajectorySegment;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_agent(seed: u64) -> Agent<f64> {
        let cfg = AgentConfig {
            latent_dim: 4,
            encoder_hidden: 6,
            mlp_hidden: 6,
            gru_hidden: 3,
            ..AgentConfig::new(2, 1)
        };
        Agent::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn batch(seed: u64, n: usize, len: usize) -> SegmentBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segs: Vec<_> = (0..n)
            .map(|_| {
                TrajectorySegment::new(
                    (0..=len).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
                    (0..len).map(|_| vec![rng.random_range(-1.0..1.0)]).collect(),
                    (0..len).map(|_| rng.random_range(0.0..1.0)).collect(),
                    vec![false; len],
                )
                .unwrap()
            })
            .collect();
        SegmentBatch::from_segments(&segs).unwrap()
    }

    #[test]
    fn update_touches_target_only_through_ema() {
        let mut agent = tiny_agent(1);
        let cfg = LearnerConfig {
            targets: ValueTargetConfig {
                horizon: 2,
                ..Default::default()
            },
            target_momentum: 1.0,
            ..Default::default()
        };
        let mut learner = Learner::new(&agent, cfg).unwrap();
        let b = batch(2, 5, 3);
        let before = agent.params.clone();
        let target_before = agent.target.clone();
        let st = learner.update(&mut agent, &b).unwrap();
        assert_eq!(agent.target, target_before);
        assert_ne!(agent.params.get("enc.l0.w"), before.get("enc.l0.w"));
        // Policy only moves on every second iteration.
        assert_eq!(agent.params.get("pi.l0.w"), before.get("pi.l0.w"));
        assert!(st.j_pi.is_none());
        let st2 = learner.update(&mut agent, &b).unwrap();
        assert!(st2.j_pi.is_some());
        assert_ne!(agent.params.get("pi.l0.w"), before.get("pi.l0.w"));
        assert_eq!((learner.optimizer_steps, learner.policy_steps), (2, 1));
        assert_eq!(st.priorities.len(), 5);
    }

    #[test]
    fn target_encoder_is_a_separate_frozen_leaf() {
        let agent = tiny_agent(3);
        let b = batch(4, 3, 3);
        let cfg = ValueTargetConfig {
            horizon: 2,
            ..Default::default()
        };
        let ld_with = |agent: &Agent<f64>| {
            let prepared = prepare(agent, &b, &cfg, TargetKind::Lambda, None).unwrap();
            let mut g = Graph::new(Mode::Train);
            let jl = joint_loss(agent, &mut g, agent.online(), &b, &prepared, &cfg, TargetKind::Lambda).unwrap();
            let grads = g.backward(jl.total, &agent.params).unwrap();
            assert!(grads.is_finite());
            jl.ld
        };
        let base = ld_with(&agent);
        assert!(base > 0.0);
        // If the target encoder aliased the online one, perturbing it would
        // leave the latent consistency error unchanged.
        let mut moved = agent.clone();
        let w = moved.target.get_mut("enc.l0.w").unwrap();
        w.data_mut()[0] += 0.7;
        assert!((ld_with(&moved) - base).abs() > 1e-9);
    }

    #[test]
    fn policy_gradient_leaves_critic_untouched() {
        let agent = tiny_agent(5);
        let mut g = Graph::new(Mode::Train);
        let z = Tensor::from_rows(2, 4, vec![0.1, -0.2, 0.3, 0.0, 0.5, 0.5, -0.5, 0.2]);
        let jp = policy_loss(&agent, &mut g, z, 2, 2).unwrap();
        let grads = g.backward(jp, &agent.params).unwrap();
        for (n, t) in grads.iter() {
            if !n.starts_with("pi.") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{n}");
            }
        }
        assert!(grads.filter(|n| n.starts_with("pi.")).flatten().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_critic_gives_zero_policy_gradient() {
        let mut agent = tiny_agent(6);
        for (n, t) in agent.params.iter_mut() {
            if n.starts_with("q.") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut g = Graph::new(Mode::Train);
        let jp = policy_loss(&agent, &mut g, Tensor::from_rows(1, 4, vec![0.3; 4]), 1, 1).unwrap();
        let grads = g.backward(jp, &agent.params).unwrap();
        assert!(grads.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ace_blind_has_no_intrinsic_term() {
        let agent = tiny_agent(7);
        let b = batch(8, 2, 3);
        let cfg = ValueTargetConfig {
            c_r: 0.0,
            horizon: 2,
            ..Default::default()
        };
        let mut n = RewardNormalizer::new(NormalizerConfig::default());
        let p = prepare(&agent, &b, &cfg, TargetKind::Lambda, Some(&mut n)).unwrap();
        assert!(p.intrinsic_batch.is_none());
        assert!(p.intrinsic.iter().flatten().all(|&v| v == 0.0));
        assert!(!n.is_initialized());
    }
}
