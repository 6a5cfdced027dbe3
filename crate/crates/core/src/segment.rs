//! Contiguous slices of experience used for joint model/value training.

use crate::error::{shape_err, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// `len` consecutive transitions of one episode.
///
/// `obs` holds `len + 1` states. `dones[i]` marks `obs[i + 1]` as terminal;
/// bootstraps at or after a terminal state are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySegment {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Importance-sampling weight assigned by the replay buffer.
    pub weight: f64,
    /// Replay handle (`usize::MAX` when the segment did not come from replay).
    pub index: usize,
    pub generation: u64,
}

impl TrajectorySegment {
    pub fn new(obs: Vec<Vec<f64>>, actions: Vec<Vec<f64>>, rewards: Vec<f64>, dones: Vec<bool>) -> Result<Self> {
        let s = Self {
            obs,
            actions,
            rewards,
            dones,
            weight: 1.0,
            index: usize::MAX,
            generation: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if n == 0 || self.obs.len() != n + 1 || self.rewards.len() != n || self.dones.len() != n {
            return Err(shape_err(
                "TrajectorySegment",
                format!(
                    "{} states, {} actions, {} rewards, {} dones",
                    self.obs.len(),
                    n,
                    self.rewards.len(),
                    self.dones.len()
                ),
            ));
        }
        Ok(())
    }
}

/// A batch of equally long segments, stored time-major.
#[derive(Clone, Debug)]
pub struct SegmentBatch<T> {
    /// `len + 1` tensors of shape `B × obs_dim`.
    pub obs: Vec<Tensor<T>>,
    /// `len` tensors of shape `B × action_dim`.
    pub actions: Vec<Tensor<T>>,
    /// `rewards[i][b]`: external reward of transition `i` in segment `b`.
    pub rewards: Vec<Vec<T>>,
    pub dones: Vec<Vec<bool>>,
    pub weights: Vec<T>,
}

impl<T: Scalar> SegmentBatch<T> {
    pub fn from_segments(segs: &[TrajectorySegment]) -> Result<Self> {
        let first = segs
            .first()
            .ok_or_else(|| crate::Error::Invalid("empty segment batch".into()))?;
        let len = first.len();
        let od = first.obs[0].len();
        let ad = first.actions[0].len();
        for s in segs {
            s.validate()?;
            if s.len() != len || s.obs.iter().any(|o| o.len() != od) || s.actions.iter().any(|a| a.len() != ad) {
                return Err(shape_err("SegmentBatch", "segments disagree in length or width"));
            }
        }
        let b = segs.len();
        let stack = |rows: &dyn Fn(&TrajectorySegment) -> &[f64], w: usize| {
            let mut data = Vec::with_capacity(b * w);
            for s in segs {
                data.extend(rows(s).iter().map(|&v| T::of(v)));
            }
            Tensor::from_rows(b, w, data)
        };
        let obs = (0..=len).map(|i| stack(&|s| &s.obs[i], od)).collect();
        let actions = (0..len).map(|i| stack(&|s| &s.actions[i], ad)).collect();
        let rewards = (0..len).map(|i| segs.iter().map(|s| T::of(s.rewards[i])).collect()).collect();
        let dones = (0..len).map(|i| segs.iter().map(|s| s.dones[i]).collect()).collect();
        let weights = segs.iter().map(|s| T::of(s.weight)).collect();
        Ok(Self {
            obs,
            actions,
            rewards,
            dones,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.weights.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(v: f64) -> TrajectorySegment {
        TrajectorySegment::new(
            vec![vec![v, 0.0], vec![v + 1.0, 0.0], vec![v + 2.0, 0.0]],
            vec![vec![0.5], vec![-0.5]],
            vec![1.0, 2.0],
            vec![false, true],
        )
        .unwrap()
    }

    #[test]
    fn stacks_time_major() {
        let b = SegmentBatch::<f32>::from_segments(&[seg(0.0), seg(10.0)]).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.obs.len(), 3);
        assert_eq!(b.obs[1].row_slice(1), &[11.0, 0.0]);
        assert_eq!(b.dones[1], vec![true, true]);
        assert_eq!(b.rewards[0], vec![1.0, 1.0]);
    }

    #[test]
    fn rejects_ragged_arrays() {
        assert!(TrajectorySegment::new(vec![vec![0.0]], vec![vec![0.0]], vec![0.0], vec![false]).is_err());
        let mut short = seg(0.0);
        short.obs.pop();
        short.actions.pop();
        short.rewards.pop();
        short.dones.pop();
        assert!(SegmentBatch::<f64>::from_segments(&[seg(0.0), short]).is_err());
    }
}
