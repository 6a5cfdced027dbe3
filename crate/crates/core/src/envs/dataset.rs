use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ActionRepeat, Env, MazeEnv, MazeLayout, TimeLimit};
use crate::error::{Error, Result};

const MAGIC: &str = "ace-transitions";

/// One `(s, a, r, s′, done)` record.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionHeader {
    pub env: String,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub count: usize,
    /// Transitions per episode; records are stored episode by episode.
    pub episode_len: usize,
}

impl TransitionHeader {
    fn line(&self) -> String {
        format!(
            "{MAGIC} format=1 env={} obs_dim={} action_dim={} count={} episode_len={}\n",
            self.env, self.obs_dim, self.action_dim, self.count, self.episode_len
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let bad = |m: String| Error::Invalid(format!("transition header: {m}"));
        let mut parts = line.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(bad("missing magic".into()));
        }
        let mut h = Self {
            env: String::new(),
            obs_dim: 0,
            action_dim: 0,
            count: 0,
            episode_len: 0,
        };
        let mut format = None;
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad field {kv:?}")))?;
            let num = || v.parse::<usize>().map_err(|_| bad(format!("{k} is not a count")));
            match k {
                "format" => format = Some(num()?),
                "env" => h.env = v.to_string(),
                "obs_dim" => h.obs_dim = num()?,
                "action_dim" => h.action_dim = num()?,
                "count" => h.count = num()?,
                "episode_len" => h.episode_len = num()?,
                _ => return Err(bad(format!("unknown field {k}"))),
            }
        }
        if format != Some(1) {
            return Err(bad("unsupported format".into()));
        }
        Ok(h)
    }

    fn record_floats(&self) -> usize {
        2 * self.obs_dim + self.action_dim + 2
    }
}

pub fn write_transitions<W: Write>(mut w: W, header: &TransitionHeader, records: &[Transition]) -> Result<()> {
    if records.len() != header.count {
        return Err(Error::Invalid("header count does not match the records".into()));
    }
    w.write_all(header.line().as_bytes())?;
    let mut buf = Vec::with_capacity(4 * header.record_floats());
    for t in records {
        if t.obs.len() != header.obs_dim || t.next_obs.len() != header.obs_dim || t.action.len() != header.action_dim {
            return Err(Error::Invalid("record width does not match the header".into()));
        }
        buf.clear();
        let fields = t
            .obs
            .iter()
            .chain(&t.action)
            .chain(std::iter::once(&t.reward))
            .chain(&t.next_obs)
            .copied()
            .chain(std::iter::once(f64::from(u8::from(t.done))));
        for v in fields {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_transitions<R: BufRead>(mut r: R) -> Result<(TransitionHeader, Vec<Transition>)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h = TransitionHeader::parse(line.trim_end())?;
    let width = h.record_floats();
    let mut bytes = vec![0u8; 4 * width];
    let mut out = Vec::with_capacity(h.count);
    for i in 0..h.count {
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Invalid(format!("record {i} truncated: {e}")))?;
        let v: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let (o, a) = (h.obs_dim, h.action_dim);
        out.push(Transition {
            obs: v[..o].to_vec(),
            action: v[o..o + a].to_vec(),
            reward: v[o + a],
            next_obs: v[o + a + 1..2 * o + a + 1].to_vec(),
            done: v[width - 1] != 0.0,
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Invalid(format!("{} trailing bytes after the records", rest.len())));
    }
    Ok((h, out))
}

fn bfs_path(layout: &MazeLayout, from: (usize, usize), to: (usize, usize)) -> Vec<(usize, usize)> {
    let idx = |(c, r): (usize, usize)| r * layout.width + c;
    let mut prev = vec![None; layout.width * layout.height];
    let mut seen = vec![false; layout.width * layout.height];
    let mut q = VecDeque::from([from]);
    seen[idx(from)] = true;
    while let Some(cell) = q.pop_front() {
        if cell == to {
            break;
        }
        for n in layout.neighbours(cell) {
            if !seen[idx(n)] {
                seen[idx(n)] = true;
                prev[idx(n)] = Some(cell);
                q.push_back(n);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while let Some(p) = prev[idx(cur)] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    if path[0] != from {
        return vec![from];
    }
    path
}

/// Agent-facing maze: two physics substeps per action, 300 actions per episode.
pub fn maze_task(layout: MazeLayout, episode_len: usize) -> TimeLimit<ActionRepeat<MazeEnv>> {
    TimeLimit::new(ActionRepeat::new(MazeEnv::new(layout), 2), episode_len)
}

/// Offline transitions from a waypoint follower: it walks shortest grid
/// paths to random free cells with a little Gaussian action noise.
///
/// Actions are rounded to `f32` before they are applied, so replaying the
/// stored actions reproduces the stored next states.
pub fn scripted_navigator_dataset<R: Rng>(
    layout: &MazeLayout,
    n: usize,
    episode_len: usize,
    rng: &mut R,
) -> (TransitionHeader, Vec<Transition>) {
    let mut env = maze_task(layout.clone(), episode_len);
    let free: Vec<(usize, usize)> = (0..layout.height)
        .flat_map(|r| (0..layout.width).map(move |c| (c, r)))
        .filter(|&(c, r)| !layout.wall(c as i64, r as i64))
        .collect();
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let mut out = Vec::with_capacity(n);
    let mut obs = env.reset();
    let mut path: Vec<(usize, usize)> = Vec::new();
    while out.len() < n {
        let pos = env.position().expect("maze has a position");
        let here = layout.cell_of(pos[0], pos[1]).expect("agent is never in a wall");
        while path.first() == Some(&here) {
            path.remove(0);
        }
        if path.is_empty() {
            let goal = free[rng.random_range(0..free.len())];
            path = bfs_path(layout, here, goal);
            path.retain(|&c| c != here);
        }
        let target = path.first().map_or([pos[0], pos[1]], |&(c, r)| [c as f64 + 0.5, r as f64 + 0.5]);
        let d = [target[0] - pos[0], target[1] - pos[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-9);
        let action: Vec<f64> = d
            .iter()
            .map(|x| ((x / len + noise.sample(rng)).clamp(-1.0, 1.0) as f32) as f64)
            .collect();
        let s = env.step(&action);
        out.push(Transition {
            obs: obs.clone(),
            action,
            reward: s.reward,
            next_obs: s.obs.clone(),
            done: s.done,
        });
        obs = s.obs;
        if s.done || s.truncated {
            obs = env.reset();
            path.clear();
        }
    }
    let header = TransitionHeader {
        env: env.id(),
        obs_dim: env.obs_dim(),
        action_dim: env.action_dim(),
        count: n,
        episode_len,
    };
    (header, out)
}

/// Re-executes the stored actions (resetting every `episode_len` records) and
/// checks each stored next state bit-for-bit at `f32` precision.
pub fn replay_matches<E: Env>(env: &mut E, header: &TransitionHeader, records: &[Transition]) -> bool {
    let as_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    for (i, t) in records.iter().enumerate() {
        if header.episode_len > 0 && i % header.episode_len == 0 {
            env.reset();
        }
        let s = env.step(&t.action);
        if as_f32(&s.obs) != as_f32(&t.next_obs) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_dataset_has_a_valid_header() {
        let layout = MazeLayout::large();
        let (h, recs) = scripted_navigator_dataset(&layout, 0, 300, &mut ChaCha8Rng::seed_from_u64(0));
        let mut buf = Vec::new();
        write_transitions(&mut buf, &h, &recs).unwrap();
        assert!(buf.starts_with(b"ace-transitions format=1 env=maze12x9 obs_dim=2 action_dim=2 count=0"));
        let (h2, r2) = read_transitions(&buf[..]).unwrap();
        assert_eq!((h2, r2.len()), (h, 0));
    }

    #[test]
    fn round_trip_and_replay() {
        let layout = MazeLayout::large();
        let (h, recs) = scripted_navigator_dataset(&layout, 700, 300, &mut ChaCha8Rng::seed_from_u64(7));
        let mut buf = Vec::new();
        write_transitions(&mut buf, &h, &recs).unwrap();
        assert_eq!(buf.len(), h.line().len() + 700 * 4 * 8);
        let (h2, back) = read_transitions(&buf[..]).unwrap();
        assert_eq!(h2, h);
        let mut env = maze_task(layout.clone(), 300);
        assert!(replay_matches(&mut env, &h2, &back));
        let probe = MazeEnv::new(layout.clone());
        for t in &back {
            let p = probe.obs_to_position(&t.next_obs);
            assert!(!layout.wall_at(p[0], p[1]));
        }
        let mut tampered = back.clone();
        tampered[5].next_obs[0] += 0.01;
        assert!(!replay_matches(&mut maze_task(layout, 300), &h2, &tampered));
    }

    #[test]
    fn navigator_explores_most_of_the_maze() {
        let layout = MazeLayout::large();
        let (_, recs) = scripted_navigator_dataset(&layout, 6000, 300, &mut ChaCha8Rng::seed_from_u64(1));
        let env = MazeEnv::new(layout.clone());
        let mut t = super::super::CoverageTracker::new(&layout);
        for r in &recs {
            t.visit(env.obs_to_position(&r.next_obs));
        }
        assert!(t.coverage() > 0.6, "{}", t.coverage());
    }

    #[test]
    fn rejects_truncated_files() {
        let layout = MazeLayout::large();
        let (h, recs) = scripted_navigator_dataset(&layout, 3, 300, &mut ChaCha8Rng::seed_from_u64(2));
        let mut buf = Vec::new();
        write_transitions(&mut buf, &h, &recs).unwrap();
        buf.pop();
        assert!(read_transitions(&buf[..]).is_err());
        assert!(read_transitions(&b"something else\n"[..]).is_err());
    }
}
