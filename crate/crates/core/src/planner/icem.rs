use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::noise::colored_noise;
use super::{PlannerConfig, PlanningModel};
use crate::error::{Error, Result};

/// An action sequence (`horizon × action_dim`, time-major) and its return.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub actions: Vec<f64>,
    pub score: f64,
}

/// Warm-start memory carried between timesteps of one episode.
#[derive(Clone, Debug)]
pub struct PlannerState {
    pub mean: Vec<f64>,
    /// Elites of the previous timestep, already shifted by one step.
    pub elites: Vec<Vec<f64>>,
    pub steps: usize,
    horizon: usize,
    rng: ChaCha8Rng,
}

impl PlannerState {
    pub fn new(seed: u64) -> Self {
        Self {
            mean: Vec::new(),
            elites: Vec::new(),
            steps: 0,
            horizon: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Forget the warm start (new episode). The RNG stream continues.
    pub fn reset(&mut self) {
        self.mean.clear();
        self.elites.clear();
        self.steps = 0;
        self.horizon = 0;
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    pub action: Vec<f64>,
    pub best: Scored,
    pub population_sizes: Vec<usize>,
    pub mean_norm: f64,
    pub std_norm: f64,
    /// The model failed and the policy action was used instead.
    pub fallback: bool,
}

/// `max(⌊S·ψ^(−k)⌋, 2E)`.
pub fn population_size(population: usize, decay: f64, k: usize, elites: usize) -> usize {
    let s = (population as f64 * decay.powi(-(k as i32))).floor() as usize;
    s.max(2 * elites)
}

/// `Σ_{t<H} γ^t r̂_t (+ γ^H V(ẑ_H))` for each sequence from a shared root.
pub fn evaluate_sequences<M: PlanningModel>(
    model: &M,
    root: &M::State,
    seqs: &[Vec<f64>],
    horizon: usize,
    gamma: f64,
    use_terminal_value: bool,
) -> Result<Vec<f64>> {
    let m = model.action_dim();
    let n = seqs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if let Some(bad) = seqs.iter().find(|s| s.len() != horizon * m) {
        return Err(Error::Invalid(format!(
            "sequence length {} does not match horizon {horizon} × {m}",
            bad.len()
        )));
    }
    let mut state = model.broadcast(root, n)?;
    let mut scores = vec![0.0; n];
    let mut disc = 1.0;
    let mut acts = vec![0.0; n * m];
    for t in 0..horizon {
        for (i, s) in seqs.iter().enumerate() {
            acts[i * m..(i + 1) * m].copy_from_slice(&s[t * m..(t + 1) * m]);
        }
        let (next, r) = model.step(&state, &acts)?;
        for (sc, ri) in scores.iter_mut().zip(r) {
            *sc += disc * ri;
        }
        disc *= gamma;
        state = next;
    }
    if use_terminal_value {
        for (sc, v) in scores.iter_mut().zip(model.terminal_value(&state)?) {
            *sc += disc * v;
        }
    }
    Ok(scores)
}

/// Best `e` entries by score, ties broken by lower index. Non-finite scores
/// rank last.
pub fn top_elites(pool: &[Scored], e: usize) -> Vec<Scored> {
    let key = |s: &Scored| if s.score.is_finite() { s.score } else { f64::NEG_INFINITY };
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.sort_by(|&a, &b| key(&pool[b]).total_cmp(&key(&pool[a])).then(a.cmp(&b)));
    idx.into_iter().take(e).map(|i| pool[i].clone()).collect()
}

/// Exponentially weighted Gaussian fit to the elites, `Ω_i = exp((φ_i − max φ)/η)`.
///
/// The fitted mean is blended as `momentum·prev + (1 − momentum)·fit`; the
/// standard deviation is floored at `floor`.
pub fn refit_distribution(elites: &[Scored], eta: f64, prev_mean: &[f64], momentum: f64, floor: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = elites
        .first()
        .ok_or_else(|| Error::Invalid("refit needs at least one elite".into()))?;
    let d = first.actions.len();
    if prev_mean.len() != d {
        return Err(Error::Invalid("previous mean has the wrong length".into()));
    }
    let best = elites
        .iter()
        .map(|e| e.score)
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = if best.is_finite() {
        elites
            .iter()
            .map(|e| if e.score.is_finite() { ((e.score - best) / eta).exp() } else { 0.0 })
            .collect()
    } else {
        vec![1.0; elites.len()]
    };
    let total: f64 = w.iter().sum();
    let mut mu = vec![0.0; d];
    for (e, wi) in elites.iter().zip(&w) {
        for (m, a) in mu.iter_mut().zip(&e.actions) {
            *m += wi * a;
        }
    }
    mu.iter_mut().for_each(|m| *m /= total);
    let mut var = vec![0.0; d];
    for (e, wi) in elites.iter().zip(&w) {
        for ((v, a), m) in var.iter_mut().zip(&e.actions).zip(&mu) {
            *v += wi * (a - m).powi(2);
        }
    }
    let sigma = var.iter().map(|v| (v / total).sqrt().max(floor)).collect();
    let mean = mu
        .iter()
        .zip(prev_mean)
        .map(|(f, p)| momentum * p + (1.0 - momentum) * f)
        .collect();
    Ok((mean, sigma))
}

fn clip_into(x: &mut [f64], low: &[f64], high: &[f64]) {
    let m = low.len();
    for (i, v) in x.iter_mut().enumerate() {
        *v = v.clamp(low[i % m], high[i % m]);
    }
}

fn shift(seq: &[f64], m: usize) -> Vec<f64> {
    let mut out = seq[m..].to_vec();
    out.extend_from_slice(&seq[seq.len() - m..]);
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rolls the policy out from the root. Row 0 is the noise-free policy;
/// later rows add colored noise scaled by `scale` to every policy action.
#[allow(clippy::too_many_arguments)]
fn policy_proposals<M: PlanningModel>(
    model: &M,
    root: &M::State,
    n: usize,
    horizon: usize,
    cfg: &PlannerConfig,
    scale: &[f64],
    low: &[f64],
    high: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Scored>> {
    let m = model.action_dim();
    let noise = colored_noise(cfg.noise_beta, m, horizon, n, rng);
    let mut state = model.broadcast(root, n)?;
    let mut seqs = vec![vec![0.0; horizon * m]; n];
    let mut scores = vec![0.0; n];
    let mut disc = 1.0;
    for t in 0..horizon {
        let mut a = model.policy(&state)?;
        for i in 1..n {
            for d in 0..m {
                a[i * m + d] += noise[(i * horizon + t) * m + d] * scale[t * m + d];
            }
        }
        clip_into(&mut a, low, high);
        for (i, s) in seqs.iter_mut().enumerate() {
            s[t * m..(t + 1) * m].copy_from_slice(&a[i * m..(i + 1) * m]);
        }
        let (next, r) = model.step(&state, &a)?;
        for (sc, ri) in scores.iter_mut().zip(r) {
            *sc += disc * ri;
        }
        disc *= cfg.gamma;
        state = next;
    }
    if cfg.use_terminal_value {
        for (sc, v) in scores.iter_mut().zip(model.terminal_value(&state)?) {
            *sc += disc * v;
        }
    }
    Ok(seqs
        .into_iter()
        .zip(scores)
        .map(|(actions, score)| Scored { actions, score })
        .collect())
}

fn optimize<M: PlanningModel>(
    state: &mut PlannerState,
    cfg: &PlannerConfig,
    episode: usize,
    model: &M,
    root: &M::State,
) -> Result<PlanOutcome> {
    let m = model.action_dim();
    let horizon = cfg.horizon.steps(episode).max(1);
    let (low, high) = model.action_bounds();
    if state.horizon != horizon || state.mean.len() != horizon * m {
        state.reset();
        state.horizon = horizon;
    }
    if state.mean.is_empty() {
        state.mean = vec![cfg.init_mean; horizon * m];
        clip_into(&mut state.mean, &low, &high);
    }
    let floor = cfg.std_floor.value(episode);
    let mut mean = state.mean.clone();
    let mut sigma = vec![cfg.init_std.max(floor); horizon * m];
    let keep = (cfg.elite_fraction * cfg.elites as f64).floor() as usize;
    let mut carried: Vec<Vec<f64>> = state.elites.iter().take(keep).cloned().collect();
    let mut sizes = Vec::with_capacity(cfg.iterations);
    let mut elites = Vec::new();

    for k in 0..cfg.iterations {
        let s_k = population_size(cfg.population, cfg.decay, k, cfg.elites);
        sizes.push(s_k);
        let n_policy = if cfg.policy_fraction > 0.0 {
            let want = if k == 0 {
                (cfg.policy_fraction * s_k as f64).ceil() as usize
            } else {
                1
            };
            want.min(s_k)
        } else {
            0
        };
        let mut n_noise = s_k - n_policy;
        let add_mean = k + 1 == cfg.iterations && n_noise > 0;
        if add_mean {
            n_noise -= 1;
        }
        let scale: Vec<f64> = if cfg.noise_scale_variance {
            sigma.iter().map(|s| s * s).collect()
        } else {
            sigma.clone()
        };
        let noise = colored_noise(cfg.noise_beta, m, horizon, n_noise, &mut state.rng);
        let mut seqs: Vec<Vec<f64>> = Vec::with_capacity(n_noise + carried.len() + 1);
        for i in 0..n_noise {
            let mut s: Vec<f64> = (0..horizon * m)
                .map(|j| mean[j] + noise[i * horizon * m + j] * scale[j])
                .collect();
            clip_into(&mut s, &low, &high);
            seqs.push(s);
        }
        seqs.append(&mut carried);
        if add_mean {
            seqs.push(mean.clone());
        }
        let scores = evaluate_sequences(model, root, &seqs, horizon, cfg.gamma, cfg.use_terminal_value)?;
        let mut pool: Vec<Scored> = seqs
            .into_iter()
            .zip(scores)
            .map(|(actions, score)| Scored { actions, score })
            .collect();
        if n_policy > 0 {
            pool.extend(policy_proposals(model, root, n_policy, horizon, cfg, &scale, &low, &high, &mut state.rng)?);
        }
        let bad = pool.iter().filter(|s| !s.score.is_finite()).count();
        if bad > 0 {
            log::warn!("planner: discarded {bad} sequences with non-finite scores");
            pool.iter_mut().filter(|s| !s.score.is_finite()).for_each(|s| s.score = f64::NEG_INFINITY);
        }
        elites = top_elites(&pool, cfg.elites);
        let (mu, sd) = refit_distribution(&elites, cfg.temperature, &mean, cfg.mean_momentum, floor)?;
        mean = mu;
        clip_into(&mut mean, &low, &high);
        sigma = sd;
        carried = elites.iter().take(keep).map(|e| e.actions.clone()).collect();
    }
    let best = elites
        .first()
        .cloned()
        .ok_or_else(|| Error::Invalid("planner produced no elites".into()))?;
    if !best.score.is_finite() {
        return Err(Error::NonFinite("every planner sequence".into()));
    }
    state.mean = shift(&mean, m);
    state.elites = elites.iter().take(keep).map(|e| shift(&e.actions, m)).collect();
    state.steps += 1;
    Ok(PlanOutcome {
        action: best.actions[..m].to_vec(),
        mean_norm: norm(&mean),
        std_norm: norm(&sigma),
        best,
        population_sizes: sizes,
        fallback: false,
    })
}

/// One receding-horizon decision from `root`.
///
/// On a model failure the policy's own action is returned (with
/// `fallback = true`) and the warm start is cleared.
pub fn plan<M: PlanningModel>(
    state: &mut PlannerState,
    cfg: &PlannerConfig,
    episode: usize,
    model: &M,
    root: &M::State,
) -> Result<PlanOutcome> {
    cfg.validate()?;
    match optimize(state, cfg, episode, model, root) {
        Ok(out) => Ok(out),
        Err(err) => {
            log::warn!("planner failed ({err}); falling back to the policy action");
            state.reset();
            let m = model.action_dim();
            let a = model.policy(&model.broadcast(root, 1)?)?;
            Ok(PlanOutcome {
                action: a[..m].to_vec(),
                best: Scored {
                    actions: a,
                    score: f64::NAN,
                },
                population_sizes: Vec::new(),
                mean_norm: 0.0,
                std_norm: 0.0,
                fallback: true,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Schedule;
    use super::*;
    use proptest::prelude::*;

    /// 1-D integrator: state x, reward −(x + a − target)², terminal −x².
    struct Line {
        target: f64,
    }

    impl PlanningModel for Line {
        type State = Vec<f64>;
        fn action_dim(&self) -> usize {
            1
        }
        fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![-1.0], vec![1.0])
        }
        fn broadcast(&self, root: &Vec<f64>, n: usize) -> Result<Vec<f64>> {
            Ok(vec![root[0]; n])
        }
        fn step(&self, s: &Vec<f64>, a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
            let next: Vec<f64> = s.iter().zip(a).map(|(x, u)| x + u).collect();
            let r = next.iter().map(|x| -(x - self.target).powi(2)).collect();
            Ok((next, r))
        }
        fn terminal_value(&self, s: &Vec<f64>) -> Result<Vec<f64>> {
            Ok(s.iter().map(|x| -x * x).collect())
        }
        fn policy(&self, s: &Vec<f64>) -> Result<Vec<f64>> {
            Ok(s.iter().map(|_| 0.3).collect())
        }
    }

    fn scored(a: &[f64], s: f64) -> Scored {
        Scored {
            actions: a.to_vec(),
            score: s,
        }
    }

    #[test]
    fn scoring_with_and_without_terminal_value() {
        let model = Line { target: 0.0 };
        let s = evaluate_sequences(&model, &vec![1.0], &[vec![0.0]], 1, 0.5, true).unwrap();
        assert_eq!(s, vec![-1.0 + 0.5 * -1.0]);
        let s = evaluate_sequences(&model, &vec![1.0], &[vec![0.5, 0.5]], 2, 0.0, true).unwrap();
        assert_eq!(s, vec![-2.25]);
        assert!(evaluate_sequences(&model, &vec![0.0], &[vec![0.0]], 2, 0.9, true).is_err());
    }

    #[test]
    fn refit_symmetry_single_elite_and_cold_limit() {
        let e = [scored(&[1.0, 0.0], 2.0), scored(&[3.0, 2.0], 2.0)];
        let (mu, _) = refit_distribution(&e, 0.5, &[0.0, 0.0], 0.0, 0.0).unwrap();
        assert_eq!(mu, vec![2.0, 1.0]);
        let (mu, sd) = refit_distribution(&e[..1], 0.5, &[0.0, 0.0], 0.0, 0.05).unwrap();
        assert_eq!(mu, vec![1.0, 0.0]);
        assert_eq!(sd, vec![0.05, 0.05]);
        let e = [scored(&[1.0, 0.0], 1.0), scored(&[3.0, 2.0], 0.9)];
        let (mu, _) = refit_distribution(&e, 1e-3, &[0.0, 0.0], 0.0, 0.0).unwrap();
        assert!((mu[0] - 1.0).abs() < 1e-3 && mu[1].abs() < 1e-3);
        let (mu, _) = refit_distribution(&e, 1e-3, &[10.0, 10.0], 0.1, 0.0).unwrap();
        assert!((mu[0] - (1.0 + 0.9)).abs() < 1e-3);
    }

    #[test]
    fn elites_sort_stably_and_push_nan_last() {
        let pool = [scored(&[0.0], 1.0), scored(&[1.0], f64::NAN), scored(&[2.0], 3.0), scored(&[3.0], 1.0)];
        let top = top_elites(&pool, 3);
        let firsts: Vec<f64> = top.iter().map(|s| s.actions[0]).collect();
        assert_eq!(firsts, vec![2.0, 0.0, 3.0]);
    }

    #[test]
    fn population_never_drops_below_twice_elites() {
        for k in 0..40 {
            assert!(population_size(256, 1.25, k, 32) >= 64);
        }
        assert_eq!(population_size(256, 1.25, 1, 32), 204);
        assert_eq!(population_size(256, 1.0, 7, 32), 256);
    }

    fn toy_cfg() -> PlannerConfig {
        PlannerConfig {
            horizon: Schedule::constant(4.0),
            population: 128,
            elites: 16,
            iterations: 4,
            std_floor: Schedule::constant(0.01),
            gamma: 0.9,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed_and_moves_toward_target() {
        let model = Line { target: 0.8 };
        let run = || {
            let mut st = PlannerState::new(42);
            let cfg = toy_cfg();
            (0..5)
                .map(|_| plan(&mut st, &cfg, 0, &model, &vec![0.0]).unwrap().action[0])
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a[0] > 0.4, "{a:?}");
    }

    #[test]
    fn all_proposals_and_no_noise_returns_policy_action() {
        let model = Line { target: 5.0 };
        let cfg = PlannerConfig {
            policy_fraction: 1.0,
            iterations: 1,
            init_std: 0.0,
            std_floor: Schedule::constant(0.0),
            ..toy_cfg()
        };
        let mut st = PlannerState::new(1);
        let out = plan(&mut st, &cfg, 0, &model, &vec![0.0]).unwrap();
        assert_eq!(out.action, vec![0.3]);
    }

    #[test]
    fn warm_start_shifts_the_mean() {
        let model = Line { target: 0.5 };
        let mut st = PlannerState::new(3);
        let cfg = toy_cfg();
        plan(&mut st, &cfg, 0, &model, &vec![0.0]).unwrap();
        let m = st.mean.clone();
        assert_eq!(m.len(), 4);
        assert_eq!(m[3], m[2]);
        assert_eq!(st.elites.len(), 4);
    }

    proptest! {
        #[test]
        fn refit_is_shift_invariant(
            scores in prop::collection::vec(-5.0f64..5.0, 1..8),
            c in -1e3f64..1e3,
            eta in 0.1f64..2.0,
        ) {
            let e: Vec<Scored> = scores.iter().enumerate().map(|(i, &s)| scored(&[i as f64, -(i as f64) * 0.5], s)).collect();
            let shifted: Vec<Scored> = e.iter().map(|s| scored(&s.actions, s.score + c)).collect();
            let (m1, s1) = refit_distribution(&e, eta, &[0.0, 0.0], 0.1, 0.0).unwrap();
            let (m2, s2) = refit_distribution(&shifted, eta, &[0.0, 0.0], 0.1, 0.0).unwrap();
            for (a, b) in m1.iter().chain(&s1).zip(m2.iter().chain(&s2)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
