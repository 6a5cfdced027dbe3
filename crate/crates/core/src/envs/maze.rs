use std::fmt::Write as _;

use super::{clip_action, Env, Step};
use crate::error::{Error, Result};

/// Corridors and dead ends on a 12 × 9 grid.
pub const LARGE_MAZE: &str = include_str!("../../fixtures/maze_large.txt");

/// Keeps a clamped point strictly outside the wall cell it touched.
const FACE_MARGIN: f64 = 1e-6;

/// Occupancy grid parsed from ASCII (`#` wall, `.` free, `S` start).
/// Cell `(col, row)` covers `[col, col+1) × [row, row+1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MazeLayout {
    pub width: usize,
    pub height: usize,
    walls: Vec<bool>,
    pub start: (usize, usize),
}

impl MazeLayout {
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err(Error::Invalid("empty maze".into()));
        }
        let mut walls = Vec::with_capacity(width * height);
        let mut start = None;
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::Invalid(format!("maze row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' => {
                        if start.replace((c, r)).is_some() {
                            return Err(Error::Invalid("maze has more than one start".into()));
                        }
                        walls.push(false);
                    }
                    other => return Err(Error::Invalid(format!("unexpected maze character {other:?}"))),
                }
            }
        }
        let start = start.ok_or_else(|| Error::Invalid("maze has no start cell".into()))?;
        Ok(Self {
            width,
            height,
            walls,
            start,
        })
    }

    pub fn large() -> Self {
        Self::parse(LARGE_MAZE).expect("bundled maze parses")
    }

    /// Cells outside the grid count as walls.
    pub fn wall(&self, col: i64, row: i64) -> bool {
        if col < 0 || row < 0 || col as usize >= self.width || row as usize >= self.height {
            return true;
        }
        self.walls[row as usize * self.width + col as usize]
    }

    pub fn wall_at(&self, x: f64, y: f64) -> bool {
        self.wall(x.floor() as i64, y.floor() as i64)
    }

    pub fn free_cells(&self) -> usize {
        self.walls.iter().filter(|w| !**w).count()
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        (!self.wall_at(x, y)).then(|| (x.floor() as usize, y.floor() as usize))
    }

    /// Four-connected free neighbours of a cell.
    pub fn neighbours(&self, (c, r): (usize, usize)) -> Vec<(usize, usize)> {
        let (c, r) = (c as i64, r as i64);
        [(c + 1, r), (c - 1, r), (c, r + 1), (c, r - 1)]
            .into_iter()
            .filter(|&(x, y)| !self.wall(x, y))
            .map(|(x, y)| (x as usize, y as usize))
            .collect()
    }

    /// Moves by `delta`, resolving x then y against the walls.
    pub fn slide(&self, pos: [f64; 2], delta: [f64; 2]) -> [f64; 2] {
        let mut p = pos;
        for axis in 0..2 {
            let mut next = p;
            next[axis] += delta[axis];
            if self.wall_at(next[0], next[1]) {
                let cell = next[axis].floor();
                next[axis] = if delta[axis] > 0.0 {
                    cell - FACE_MARGIN
                } else {
                    cell + 1.0 + FACE_MARGIN
                };
                if self.wall_at(next[0], next[1]) {
                    next[axis] = p[axis];
                }
            }
            p = next;
        }
        p
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = if (c, r) == self.start {
                    'S'
                } else if self.walls[r * self.width + c] {
                    '#'
                } else {
                    '.'
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}

/// Reward-free point agent driven by 2-D velocity commands.
///
/// `step` advances one physics substep; wrap it in
/// [`ActionRepeat`](super::ActionRepeat) and [`TimeLimit`](super::TimeLimit)
/// for the agent-facing task. Observations are the position rescaled to
/// `[-1, 1]²`.
#[derive(Clone, Debug)]
pub struct MazeEnv {
    pub layout: MazeLayout,
    pub dt: f64,
    pos: [f64; 2],
    warned: u32,
}

impl MazeEnv {
    pub fn new(layout: MazeLayout) -> Self {
        let pos = [layout.start.0 as f64 + 0.5, layout.start.1 as f64 + 0.5];
        Self {
            layout,
            dt: 0.1,
            pos,
            warned: 0,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        vec![
            2.0 * self.pos[0] / self.layout.width as f64 - 1.0,
            2.0 * self.pos[1] / self.layout.height as f64 - 1.0,
        ]
    }

    pub fn set_position(&mut self, pos: [f64; 2]) -> Result<()> {
        if self.layout.wall_at(pos[0], pos[1]) {
            return Err(Error::Invalid(format!("position {pos:?} lies inside a wall")));
        }
        self.pos = pos;
        Ok(())
    }

    /// Inverse of the observation scaling.
    pub fn obs_to_position(&self, obs: &[f64]) -> [f64; 2] {
        [
            (obs[0] + 1.0) * 0.5 * self.layout.width as f64,
            (obs[1] + 1.0) * 0.5 * self.layout.height as f64,
        ]
    }
}

impl Env for MazeEnv {
    fn id(&self) -> String {
        format!("maze{}x{}", self.layout.width, self.layout.height)
    }
    fn obs_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn reset(&mut self) -> Vec<f64> {
        self.pos = [self.layout.start.0 as f64 + 0.5, self.layout.start.1 as f64 + 0.5];
        self.observe()
    }
    fn step(&mut self, action: &[f64]) -> Step {
        let a = clip_action(action, &mut self.warned);
        self.pos = self.layout.slide(self.pos, [self.dt * a[0], self.dt * a[1]]);
        Step {
            obs: self.observe(),
            reward: 0.0,
            done: false,
            truncated: false,
        }
    }
    fn position(&self) -> Option<[f64; 2]> {
        Some(self.pos)
    }
}

/// Visited free cells of one run.
#[derive(Clone, Debug)]
pub struct CoverageTracker {
    layout: MazeLayout,
    visited: Vec<bool>,
    count: usize,
}

impl CoverageTracker {
    pub fn new(layout: &MazeLayout) -> Self {
        let mut t = Self {
            layout: layout.clone(),
            visited: vec![false; layout.width * layout.height],
            count: 0,
        };
        let (c, r) = layout.start;
        t.visit([c as f64 + 0.5, r as f64 + 0.5]);
        t
    }

    pub fn visit(&mut self, pos: [f64; 2]) {
        if let Some((c, r)) = self.layout.cell_of(pos[0], pos[1]) {
            let i = r * self.layout.width + c;
            if !self.visited[i] {
                self.visited[i] = true;
                self.count += 1;
            }
        }
    }

    pub fn visited(&self) -> usize {
        self.count
    }

    pub fn coverage(&self) -> f64 {
        self.count as f64 / self.layout.free_cells() as f64
    }

    /// Binary graymap: walls 0, unvisited free cells 128, visited 255.
    /// Each cell becomes a `scale × scale` block.
    pub fn to_pgm(&self, scale: usize) -> Vec<u8> {
        let scale = scale.max(1);
        let (w, h) = (self.layout.width * scale, self.layout.height * scale);
        let mut header = String::new();
        let _ = write!(header, "P5\n{w} {h}\n255\n");
        let mut out = header.into_bytes();
        for y in 0..h {
            for x in 0..w {
                let (c, r) = (x / scale, y / scale);
                let v = if self.layout.wall(c as i64, r as i64) {
                    0
                } else if self.visited[r * self.layout.width + c] {
                    255
                } else {
                    128
                };
                out.push(v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ONE_WALL: &str = "#####\n#S#.#\n#...#\n#####\n";

    #[test]
    fn parses_the_bundled_maze() {
        let m = MazeLayout::large();
        assert_eq!((m.width, m.height), (12, 9));
        assert_eq!(m.start, (1, 1));
        assert_eq!(m.free_cells(), 46);
        assert_eq!(m.render(), LARGE_MAZE);
    }

    #[test]
    fn rejects_bad_fixtures() {
        assert!(MazeLayout::parse("###\n#.#\n###").is_err());
        assert!(MazeLayout::parse("#S#\n#S#").is_err());
        assert!(MazeLayout::parse("#S#\n##").is_err());
        assert!(MazeLayout::parse("#Sx").is_err());
    }

    #[test]
    fn zero_action_stays_put() {
        let mut env = MazeEnv::new(MazeLayout::large());
        let o = env.reset();
        assert_eq!(env.step(&[0.0, 0.0]).obs, o);
    }

    #[test]
    fn pushing_into_a_wall_stops_at_the_face() {
        let mut env = MazeEnv::new(MazeLayout::parse(ONE_WALL).unwrap());
        env.reset();
        for _ in 0..20 {
            env.step(&[1.0, 0.0]);
        }
        let p = env.position().unwrap();
        assert!((p[0] - 2.0).abs() < 1e-5, "{p:?}");
        assert_eq!(p[1], 1.5);
        // Sliding along the wall still moves the free axis.
        for _ in 0..3 {
            env.step(&[1.0, 1.0]);
        }
        let q = env.position().unwrap();
        assert!((q[0] - 2.0).abs() < 1e-5 && (q[1] - 1.8).abs() < 1e-9);
    }

    #[test]
    fn out_of_box_actions_are_clipped() {
        let mut a = MazeEnv::new(MazeLayout::large());
        let mut b = a.clone();
        assert_eq!(a.step(&[5.0, 0.3]).obs, b.step(&[1.0, 0.3]).obs);
    }

    #[test]
    fn coverage_counts_cells_once() {
        let layout = MazeLayout::parse(ONE_WALL).unwrap();
        let mut t = CoverageTracker::new(&layout);
        assert_eq!(t.coverage(), 1.0 / 5.0);
        t.visit([1.5, 1.5]);
        t.visit([1.2, 1.9]);
        assert_eq!(t.visited(), 1);
        for (c, r) in [(1, 2), (2, 2), (3, 2), (3, 1)] {
            t.visit([c as f64 + 0.5, r as f64 + 0.5]);
        }
        assert_eq!(t.coverage(), 1.0);
        let pgm = t.to_pgm(2);
        assert!(pgm.starts_with(b"P5\n10 8\n255\n"));
        assert_eq!(pgm.len(), b"P5\n10 8\n255\n".len() + 80);
    }

    proptest! {
        #[test]
        fn never_inside_a_wall(
            cells in prop::collection::vec(prop::bool::weighted(0.3), 36),
            actions in prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5), 1..200),
        ) {
            let mut text = String::new();
            for r in 0..6 {
                for c in 0..6 {
                    let ch = if r == 0 && c == 0 { 'S' } else if cells[r * 6 + c] { '#' } else { '.' };
                    text.push(ch);
                }
                text.push('\n');
            }
            let mut env = MazeEnv::new(MazeLayout::parse(&text).unwrap());
            env.reset();
            for (x, y) in actions {
                env.step(&[x, y]);
                let p = env.position().unwrap();
                prop_assert!(!env.layout.wall_at(p[0], p[1]), "{p:?}");
            }
        }
    }
}
