use std::collections::VecDeque;

use rand::Rng;

use super::sum_tree::SumTree;
use crate::error::{Error, Result};
use crate::segment::TrajectorySegment;

/// One finished (or truncated) episode.
///
/// `obs` has one more entry than `actions`; `dones[t]` marks `obs[t + 1]`
/// as terminal. A time-limit cut is not a terminal state.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Episode {
    pub fn new(first_obs: Vec<f64>) -> Self {
        Self {
            obs: vec![first_obs],
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    pub fn push(&mut self, action: Vec<f64>, reward: f64, next_obs: Vec<f64>, done: bool) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.obs.push(next_obs);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if n == 0 {
            return Err(Error::Episode("episode has no transitions".into()));
        }
        if self.obs.len() != n + 1 || self.rewards.len() != n || self.dones.len() != n {
            return Err(Error::Episode(format!(
                "{} states for {} actions, {} rewards, {} done flags",
                self.obs.len(),
                n,
                self.rewards.len(),
                self.dones.len()
            )));
        }
        let (od, ad) = (self.obs[0].len(), self.actions[0].len());
        if self.obs.iter().any(|o| o.len() != od) || self.actions.iter().any(|a| a.len() != ad) {
            return Err(Error::Episode("ragged observation or action rows".into()));
        }
        Ok(())
    }

    /// Extends the episode to at least `len` transitions by repeating the
    /// final state with zero reward and `done = true`.
    pub fn padded(mut self, len: usize) -> Self {
        while self.len() < len {
            let last = self.obs.last().cloned().expect("validated");
            let act = self.actions.last().cloned().expect("validated");
            self.push(act, 0.0, last, true);
        }
        self
    }

    /// `len` transitions starting at `start`.
    pub fn segment(&self, start: usize, len: usize) -> TrajectorySegment {
        TrajectorySegment {
            obs: self.obs[start..=start + len].to_vec(),
            actions: self.actions[start..start + len].to_vec(),
            rewards: self.rewards[start..start + len].to_vec(),
            dones: self.dones[start..start + len].to_vec(),
            weight: 1.0,
            index: usize::MAX,
            generation: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayConfig {
    /// Transitions per sampled segment (`H + 1`).
    pub segment_len: usize,
    /// Maximum number of live segment starts.
    pub capacity: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            segment_len: 7,
            capacity: 1 << 20,
            alpha: 0.6,
            beta: 0.4,
            epsilon: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Slot {
    episode: u64,
    start: usize,
    generation: u64,
}

#[derive(Clone, Debug)]
struct Stored {
    id: u64,
    episode: Episode,
    slots: Vec<usize>,
    relabeled: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayStats {
    pub segments: usize,
    pub episodes: usize,
    pub relabeled_segments: usize,
    pub max_priority: f64,
    pub stale_updates: u64,
}

/// Prioritized replay over fixed-length segments of stored episodes.
///
/// Every valid segment start is a leaf of a sum tree. Priorities are stored
/// already exponentiated, `(|δ| + ε)^α`; new segments enter at the current
/// maximum. Sampling handles carry a generation so updates that arrive
/// after their segment was evicted are dropped and counted.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    config: ReplayConfig,
    tree: SumTree,
    slots: Vec<Option<Slot>>,
    free: Vec<usize>,
    episodes: VecDeque<Stored>,
    next_id: u64,
    generation: u64,
    max_priority: f64,
    stale_updates: u64,
    relabeled_segments: usize,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig) -> Result<Self> {
        if config.segment_len == 0 || config.capacity == 0 {
            return Err(Error::Invalid("segment length and capacity must be positive".into()));
        }
        if !(config.epsilon > 0.0) || config.alpha < 0.0 || config.beta < 0.0 {
            return Err(Error::Invalid("PER requires ε > 0 and non-negative exponents".into()));
        }
        Ok(Self {
            tree: SumTree::new(config.capacity),
            slots: vec![None; config.capacity],
            free: (0..config.capacity).rev().collect(),
            episodes: VecDeque::new(),
            next_id: 0,
            generation: 0,
            max_priority: 1.0,
            stale_updates: 0,
            relabeled_segments: 0,
            config,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    /// Number of live segment starts.
    pub fn len(&self) -> usize {
        self.config.capacity - self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> ReplayStats {
        ReplayStats {
            segments: self.len(),
            episodes: self.episodes.len(),
            relabeled_segments: self.relabeled_segments,
            max_priority: self.max_priority,
            stale_updates: self.stale_updates,
        }
    }

    pub fn priority(&self, slot: usize) -> f64 {
        self.tree.get(slot)
    }

    pub fn total_priority(&self) -> f64 {
        self.tree.total()
    }

    /// Stores an episode and registers its segment starts; returns the slots.
    pub fn push_episode(&mut self, episode: Episode) -> Result<Vec<usize>> {
        self.push(episode, false)
    }

    pub(super) fn push(&mut self, episode: Episode, relabeled: bool) -> Result<Vec<usize>> {
        episode.validate()?;
        let l = self.config.segment_len;
        let episode = episode.padded(l);
        let starts = episode.len() - l + 1;
        if starts > self.config.capacity {
            return Err(Error::Episode(format!(
                "{starts} segments exceed the buffer capacity {}",
                self.config.capacity
            )));
        }
        while self.free.len() < starts {
            self.evict_oldest();
        }
        let id = self.next_id;
        self.next_id += 1;
        let mut taken = Vec::with_capacity(starts);
        for start in 0..starts {
            let slot = self.free.pop().expect("room was made");
            self.generation += 1;
            self.slots[slot] = Some(Slot {
                episode: id,
                start,
                generation: self.generation,
            });
            self.tree.set(slot, self.max_priority);
            taken.push(slot);
        }
        if relabeled {
            self.relabeled_segments += starts;
        }
        self.episodes.push_back(Stored {
            id,
            episode,
            slots: taken.clone(),
            relabeled,
        });
        Ok(taken)
    }

    fn evict_oldest(&mut self) {
        let old = self.episodes.pop_front().expect("eviction from an empty buffer");
        for s in old.slots {
            self.slots[s] = None;
            self.tree.set(s, 0.0);
            self.free.push(s);
        }
        if old.relabeled {
            self.relabeled_segments -= old.episode.len() - self.config.segment_len + 1;
        }
    }

    fn stored(&self, id: u64) -> &Stored {
        let front = self.episodes.front().expect("live slot implies a stored episode").id;
        &self.episodes[(id - front) as usize]
    }

    /// Segment behind a live slot, without sampling metadata.
    pub fn segment_at(&self, slot: usize) -> Option<TrajectorySegment> {
        let s = self.slots.get(slot).copied().flatten()?;
        let mut seg = self.stored(s.episode).episode.segment(s.start, self.config.segment_len);
        seg.index = slot;
        seg.generation = s.generation;
        Some(seg)
    }

    /// Draws `n` segments with probability `p_i / Σp`, independently and with
    /// replacement. Weights are `(N·P(i))^(−β)` divided by the batch maximum.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<TrajectorySegment>> {
        if self.is_empty() {
            return Err(Error::Invalid("cannot sample from an empty replay buffer".into()));
        }
        let total = self.tree.total();
        let live = self.len() as f64;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.random::<f64>() * total;
            let slot = self.tree.find(u);
            let mut seg = self.segment_at(slot).expect("sum tree only returns live slots");
            let p = self.tree.get(slot) / total;
            seg.weight = (live * p).powf(-self.config.beta);
            out.push(seg);
        }
        let wmax = out.iter().map(|s| s.weight).fold(0.0, f64::max);
        for s in &mut out {
            s.weight /= wmax;
        }
        Ok(out)
    }

    /// `p ← (|δ| + ε)^α` for each handle; stale handles are skipped.
    pub fn update_priorities(&mut self, handles: &[(usize, u64)], td: &[f64]) -> Result<()> {
        if handles.len() != td.len() {
            return Err(Error::Invalid(format!("{} handles for {} TD errors", handles.len(), td.len())));
        }
        for (&(slot, generation), &d) in handles.iter().zip(td) {
            if !d.is_finite() {
                return Err(Error::NonFinite("TD error for priority update".into()));
            }
            match self.slots.get(slot).copied().flatten() {
                Some(s) if s.generation == generation => {
                    let p = (d.abs() + self.config.epsilon).powf(self.config.alpha);
                    self.tree.set(slot, p);
                    self.max_priority = self.max_priority.max(p);
                }
                _ => self.stale_updates += 1,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode(len: usize, tag: f64) -> Episode {
        let mut e = Episode::new(vec![tag, 0.0]);
        for t in 0..len {
            e.push(vec![t as f64], t as f64, vec![tag, (t + 1) as f64], false);
        }
        e
    }

    fn buffer(l: usize, cap: usize) -> ReplayBuffer {
        ReplayBuffer::new(ReplayConfig {
            segment_len: l,
            capacity: cap,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn segment_counts() {
        let mut b = buffer(4, 100);
        assert!(b.sample(1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert_eq!(b.push_episode(episode(4, 0.0)).unwrap().len(), 1);
        assert_eq!(b.push_episode(episode(4 + 3, 1.0)).unwrap().len(), 4);
        assert_eq!(b.len(), 5);
        assert!(b.sample(3, &mut ChaCha8Rng::seed_from_u64(0)).is_ok());
    }

    #[test]
    fn short_episodes_are_padded_with_terminal_repeats() {
        let mut b = buffer(4, 10);
        let slots = b.push_episode(episode(2, 5.0)).unwrap();
        assert_eq!(slots.len(), 1);
        let s = b.segment_at(slots[0]).unwrap();
        assert_eq!(s.dones, vec![false, false, true, true]);
        assert_eq!(s.rewards, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.obs[4], vec![5.0, 2.0]);
        assert_eq!(s.obs[3], s.obs[2]);
    }

    #[test]
    fn malformed_episode_is_rejected() {
        let mut e = episode(5, 0.0);
        e.rewards.pop();
        assert!(buffer(2, 10).push_episode(e).is_err());
    }

    #[test]
    fn two_item_weights() {
        let mut b = ReplayBuffer::new(ReplayConfig {
            segment_len: 1,
            capacity: 2,
            alpha: 1.0,
            beta: 1.0,
            epsilon: 1e-5,
        })
        .unwrap();
        let s = b.push_episode(episode(2, 0.0)).unwrap();
        b.update_priorities(&[(s[0], 1), (s[1], 2)], &[2.0 - 1e-5, 1.0 - 1e-5]).unwrap();
        assert!((b.priority(s[0]) / b.total_priority() - 2.0 / 3.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = b.sample(64, &mut rng).unwrap();
        for seg in &batch {
            let want = if seg.index == s[0] { 0.5 } else { 1.0 };
            assert!((seg.weight - want).abs() < 1e-12);
        }
        assert!(batch.iter().any(|x| x.index == s[0]) && batch.iter().any(|x| x.index == s[1]));
    }

    #[test]
    fn zero_td_keeps_positive_priority_and_alpha_one_is_linear() {
        let mut b = ReplayBuffer::new(ReplayConfig {
            segment_len: 1,
            capacity: 4,
            alpha: 1.0,
            ..Default::default()
        })
        .unwrap();
        let s = b.push_episode(episode(3, 0.0)).unwrap();
        let h: Vec<(usize, u64)> = s.iter().map(|&i| (i, b.segment_at(i).unwrap().generation)).collect();
        b.update_priorities(&h, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(b.priority(s[0]), 1e-5);
        assert!(((b.priority(s[2]) - 1e-5) / (b.priority(s[1]) - 1e-5) - 2.0).abs() < 1e-12);
        assert!((b.total_priority() - (1e-5 + 0.50001 + 1.00001)).abs() < 1e-12);
    }

    #[test]
    fn eviction_makes_old_handles_stale() {
        let mut b = buffer(2, 4);
        let first = b.push_episode(episode(3, 0.0)).unwrap();
        let gen0 = b.segment_at(first[0]).unwrap().generation;
        b.push_episode(episode(4, 1.0)).unwrap();
        assert_eq!(b.stats().episodes, 1);
        assert_eq!(b.len(), 3);
        b.update_priorities(&[(first[0], gen0)], &[3.0]).unwrap();
        assert_eq!(b.stats().stale_updates, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(b.sample(50, &mut rng).unwrap().iter().all(|s| s.obs[0][0] == 1.0));
    }

    #[test]
    fn new_segments_enter_at_max_priority() {
        let mut b = buffer(1, 8);
        let s = b.push_episode(episode(1, 0.0)).unwrap();
        b.update_priorities(&[(s[0], 1)], &[9.0]).unwrap();
        let t = b.push_episode(episode(1, 1.0)).unwrap();
        assert_eq!(b.priority(t[0]), b.priority(s[0]));
        assert_eq!(b.stats().max_priority, b.priority(s[0]));
    }
}
