//! Point-mass navigation in an ASCII grid maze with a sparse goal reward.
//!
//! Cell `(row, col)` covers `x ∈ [col, col+1]`, `y ∈ [row, row+1]`; the state
//! is the point's `(x, y)`. Motion is a straight segment of length
//! `step_scale·a`; if the segment enters a wall it stops at the wall face.

use std::collections::VecDeque;
use std::path::PathBuf;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, Result, StepOutcome};

pub const UMAZE: &str = "\
#####
#S..#
###.#
#G..#
#####";

pub const MEDIUM_MAZE: &str = "\
########
#S.##..#
#..#...#
##...###
#..#...#
#.#..#.#
#...#.G#
########";

pub const LARGE_MAZE: &str = "\
############
#S...#.....#
#.##.#.#.#.#
#......#...#
#.####.###.#
#..#.#.....#
##.#.#.#.###
#..#...#.G.#
############";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Free,
    Start,
    Goal,
}

impl Cell {
    pub fn is_open(self) -> bool {
        self != Cell::Wall
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MazeLayout {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
    goal: (usize, usize),
    starts: Vec<(usize, usize)>,
    /// BFS distance (in cells) from every cell to the goal; `usize::MAX` for
    /// walls and unreachable cells.
    goal_distance: Vec<usize>,
}

impl MazeLayout {
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(EnvError::Config("empty maze".into()));
        }
        let cols = lines[0].chars().count();
        let rows = lines.len();
        let mut cells = Vec::with_capacity(rows * cols);
        let mut goals = Vec::new();
        let mut starts = Vec::new();
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(EnvError::Config(format!("maze row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Free,
                    'S' => {
                        starts.push((r, c));
                        Cell::Start
                    }
                    'G' => {
                        goals.push((r, c));
                        Cell::Goal
                    }
                    other => return Err(EnvError::Config(format!("unknown maze character {other:?}"))),
                };
                let border = r == 0 || c == 0 || r + 1 == rows || c + 1 == cols;
                if border && cell != Cell::Wall {
                    return Err(EnvError::Config(format!("maze border open at ({r}, {c})")));
                }
                cells.push(cell);
            }
        }
        if goals.len() != 1 {
            return Err(EnvError::Config(format!("maze needs exactly one goal, found {}", goals.len())));
        }
        if starts.is_empty() {
            return Err(EnvError::Config("maze needs at least one start cell".into()));
        }
        let mut layout = Self {
            rows,
            cols,
            cells,
            goal: goals[0],
            starts,
            goal_distance: Vec::new(),
        };
        layout.goal_distance = layout.distances_from(layout.goal);
        Ok(layout)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "umaze" => Self::parse(UMAZE),
            "medium" => Self::parse(MEDIUM_MAZE),
            "large" => Self::parse(LARGE_MAZE),
            other => Err(EnvError::Config(format!("unknown builtin maze {other:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, r: usize, c: usize) -> Cell {
        self.cells[r * self.cols + c]
    }

    pub fn is_wall(&self, r: usize, c: usize) -> bool {
        self.cell(r, c) == Cell::Wall
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    pub fn starts(&self) -> &[(usize, usize)] {
        &self.starts
    }

    pub fn open_cells(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| self.cell(r, c).is_open())
            .collect()
    }

    pub fn center(&self, cell: (usize, usize)) -> [f64; 2] {
        [cell.1 as f64 + 0.5, cell.0 as f64 + 0.5]
    }

    /// Cell containing point `p`, if inside the grid.
    pub fn cell_of(&self, p: &[f64]) -> Option<(usize, usize)> {
        if p[0] < 0.0 || p[1] < 0.0 {
            return None;
        }
        let (c, r) = (p[0].floor() as usize, p[1].floor() as usize);
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    fn neighbors(&self, (r, c): (usize, usize)) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cand = [
            (r.wrapping_sub(1), c),
            (r + 1, c),
            (r, c.wrapping_sub(1)),
            (r, c + 1),
        ];
        cand.into_iter()
            .filter(move |&(rr, cc)| rr < self.rows && cc < self.cols && self.cell(rr, cc).is_open())
    }

    pub fn distances_from(&self, from: (usize, usize)) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.rows * self.cols];
        if !self.cell(from.0, from.1).is_open() {
            return dist;
        }
        dist[from.0 * self.cols + from.1] = 0;
        let mut queue = VecDeque::from([from]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[cur.0 * self.cols + cur.1];
            for nb in self.neighbors(cur) {
                let slot = &mut dist[nb.0 * self.cols + nb.1];
                if *slot == usize::MAX {
                    *slot = d + 1;
                    queue.push_back(nb);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.open_cells()
            .iter()
            .all(|&(r, c)| self.goal_distance[r * self.cols + c] != usize::MAX)
    }

    pub fn goal_distance(&self, cell: (usize, usize)) -> usize {
        self.goal_distance[cell.0 * self.cols + cell.1]
    }

    /// Shortest 4-connected cell path, endpoints included.
    pub fn shortest_path(&self, from: (usize, usize), to: (usize, usize)) -> Option<Vec<(usize, usize)>> {
        let dist = self.distances_from(to);
        if dist[from.0 * self.cols + from.1] == usize::MAX {
            return None;
        }
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            let d = dist[cur.0 * self.cols + cur.1];
            cur = self
                .neighbors(cur)
                .find(|nb| dist[nb.0 * self.cols + nb.1].checked_add(1) == Some(d))
                .expect("BFS predecessor exists");
            path.push(cur);
        }
        Some(path)
    }
}

fn default_maze() -> String {
    "umaze".into()
}

fn default_step_scale() -> f64 {
    0.15
}

fn default_goal_radius() -> f64 {
    0.3
}

fn default_horizon() -> usize {
    300
}

fn default_start_jitter() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMazeSpec {
    /// Builtin layout name (`umaze`, `medium`, `large`); ignored when
    /// `maze_file` is set.
    #[serde(default = "default_maze")]
    pub maze: String,
    #[serde(default)]
    pub maze_file: Option<PathBuf>,
    #[serde(default = "default_step_scale")]
    pub step_scale: f64,
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Half-width of the uniform offset around a start cell center on reset.
    #[serde(default = "default_start_jitter")]
    pub start_jitter: f64,
}

impl Default for PointMazeSpec {
    fn default() -> Self {
        Self {
            maze: default_maze(),
            maze_file: None,
            step_scale: default_step_scale(),
            goal_radius: default_goal_radius(),
            horizon: default_horizon(),
            start_jitter: default_start_jitter(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointMaze {
    pub layout: MazeLayout,
    pub step_scale: f64,
    pub goal_radius: f64,
    pub horizon: usize,
    pub start_jitter: f64,
}

impl PointMaze {
    pub fn new(layout: MazeLayout, step_scale: f64, goal_radius: f64, horizon: usize) -> Result<Self> {
        if horizon < 1 {
            return Err(EnvError::Config("horizon must be at least 1".into()));
        }
        if !(step_scale > 0.0) || !(goal_radius > 0.0) {
            return Err(EnvError::Config("step scale and goal radius must be positive".into()));
        }
        Ok(Self {
            layout,
            step_scale,
            goal_radius,
            horizon,
            start_jitter: default_start_jitter(),
        })
    }

    pub fn from_spec(spec: &PointMazeSpec) -> Result<Self> {
        let layout = match &spec.maze_file {
            Some(path) => MazeLayout::parse(&std::fs::read_to_string(path).map_err(|e| {
                EnvError::Config(format!("cannot read maze file {}: {e}", path.display()))
            })?)?,
            None => MazeLayout::builtin(&spec.maze)?,
        };
        let mut maze = Self::new(layout, spec.step_scale, spec.goal_radius, spec.horizon)?;
        if !(0.0..0.5).contains(&spec.start_jitter) {
            return Err(EnvError::Config("start jitter must be in [0, 0.5)".into()));
        }
        maze.start_jitter = spec.start_jitter;
        Ok(maze)
    }

    pub fn goal_point(&self) -> [f64; 2] {
        self.layout.center(self.layout.goal())
    }

    /// True when `p` lies in the closed square of some open cell.
    pub fn in_free_space(&self, p: &[f64]) -> bool {
        if p.len() != 2 || !p[0].is_finite() || !p[1].is_finite() {
            return false;
        }
        let (x, y) = (p[0], p[1]);
        let c0 = x.floor() as isize;
        let r0 = y.floor() as isize;
        // candidate cells whose closed square can contain p
        let rs = [r0 - 1, r0];
        let cs = [c0 - 1, c0];
        rs.iter().any(|&r| {
            cs.iter().any(|&c| {
                r >= 0
                    && c >= 0
                    && (r as usize) < self.layout.rows()
                    && (c as usize) < self.layout.cols()
                    && self.layout.cell(r as usize, c as usize).is_open()
                    && x >= c as f64
                    && x <= c as f64 + 1.0
                    && y >= r as f64
                    && y <= r as f64 + 1.0
            })
        })
    }

    /// True when `p` is strictly inside some wall cell.
    pub fn in_wall_interior(&self, p: &[f64]) -> bool {
        match self.layout.cell_of(p) {
            Some((r, c)) => {
                self.layout.is_wall(r, c)
                    && p[0] > c as f64
                    && p[0] < c as f64 + 1.0
                    && p[1] > r as f64
                    && p[1] < r as f64 + 1.0
            }
            None => true,
        }
    }

    /// Moves from `s` along `delta`. On contact with a wall face the normal
    /// component stops at the face and the tangential remainder slides.
    pub fn sweep(&self, s: [f64; 2], delta: [f64; 2]) -> [f64; 2] {
        for axis in 0..2 {
            if delta[axis] == 0.0 {
                let mut p = s;
                p[1 - axis] = self.slide(s, 1 - axis, delta[1 - axis]);
                return p;
            }
        }
        match self.first_contact(s, delta) {
            None => [s[0] + delta[0], s[1] + delta[1]],
            Some((t, axis, face)) => {
                let mut p = [s[0] + t * delta[0], s[1] + t * delta[1]];
                p[axis] = face;
                let j = 1 - axis;
                p[j] = self.slide(p, j, (1.0 - t) * delta[j]);
                p
            }
        }
    }

    /// Furthest coordinate reachable from `p` moving `dist` along `axis`
    /// without leaving free space. Membership is constant between grid lines,
    /// so one midpoint probe per band decides it.
    fn slide(&self, p: [f64; 2], axis: usize, dist: f64) -> f64 {
        let target = p[axis] + dist;
        let mut cur = p[axis];
        let mut probe = p;
        while cur != target {
            let line = if dist > 0.0 { cur.floor() + 1.0 } else { cur.ceil() - 1.0 };
            let end = if dist > 0.0 { line.min(target) } else { line.max(target) };
            probe[axis] = 0.5 * (cur + end);
            if !self.in_free_space(&probe) {
                break;
            }
            cur = end;
        }
        cur
    }

    fn first_contact(&self, s: [f64; 2], delta: [f64; 2]) -> Option<(f64, usize, f64)> {
        let end = [s[0] + delta[0], s[1] + delta[1]];
        let c_lo = s[0].min(end[0]).floor() as isize - 1;
        let c_hi = s[0].max(end[0]).floor() as isize + 1;
        let r_lo = s[1].min(end[1]).floor() as isize - 1;
        let r_hi = s[1].max(end[1]).floor() as isize + 1;
        let mut best: Option<(f64, usize, f64)> = None;
        for r in r_lo.max(0)..=r_hi.min(self.layout.rows() as isize - 1) {
            for c in c_lo.max(0)..=c_hi.min(self.layout.cols() as isize - 1) {
                if !self.layout.is_wall(r as usize, c as usize) {
                    continue;
                }
                let lo = [c as f64, r as f64];
                let hi = [c as f64 + 1.0, r as f64 + 1.0];
                if let Some((t, axis, face)) = entry_time(s, delta, lo, hi) {
                    if best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, axis, face));
                    }
                }
            }
        }
        best
    }

    pub fn reward_at(&self, p: &[f64]) -> StepOutcome {
        let g = self.goal_point();
        let d = ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
        let done = d <= self.goal_radius;
        StepOutcome {
            reward: if done { 1.0 } else { 0.0 },
            done,
        }
    }

    /// A uniformly chosen start cell center plus jitter.
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let starts = self.layout.starts();
        let cell = starts[rng.random_range(0..starts.len())];
        let c = self.layout.center(cell);
        let j = self.start_jitter;
        if j == 0.0 {
            return c;
        }
        [c[0] + rng.random_range(-j..=j), c[1] + rng.random_range(-j..=j)]
    }
}

/// Earliest parameter `t ∈ [0, 1)` at which `s + t·d` enters the open box
/// `(lo, hi)`, with the axis and face coordinate that was crossed.
fn entry_time(s: [f64; 2], d: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<(f64, usize, f64)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut axis = 0;
    let mut face = 0.0;
    for k in 0..2 {
        if d[k] == 0.0 {
            if !(s[k] > lo[k] && s[k] < hi[k]) {
                return None;
            }
            continue;
        }
        let (t_near, t_far, near_face) = if d[k] > 0.0 {
            ((lo[k] - s[k]) / d[k], (hi[k] - s[k]) / d[k], lo[k])
        } else {
            ((hi[k] - s[k]) / d[k], (lo[k] - s[k]) / d[k], hi[k])
        };
        if t_near > t_enter {
            t_enter = t_near;
            axis = k;
            face = near_face;
        }
        t_exit = t_exit.min(t_far);
    }
    if t_enter < t_exit && t_exit > 0.0 && t_enter < 1.0 {
        Some((t_enter.max(0.0), axis, face))
    } else {
        None
    }
}

impl Environment for PointMaze {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.sample_start(rng).to_vec()
    }

    fn step(&self, state: &[f64], action: &[f64], next: &mut Vec<f64>) -> Result<StepOutcome> {
        if action.len() != 2 || action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::Argument(format!("maze actions are finite 2-vectors, got {action:?}")));
        }
        if !self.in_free_space(state) || self.in_wall_interior(state) {
            return Err(EnvError::State(format!("state {state:?} is outside free space")));
        }
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let p = self.sweep([state[0], state[1]], [self.step_scale * a[0], self.step_scale * a[1]]);
        next.clear();
        next.extend_from_slice(&p);
        Ok(self.reward_at(&p))
    }

    fn is_success(&self, outcome: &StepOutcome) -> bool {
        outcome.done
    }
}

/// Shortest-path controller that heads for the next cell center on the way
/// to the goal.
#[derive(Debug, Clone)]
pub struct GoalOracle<'a> {
    maze: &'a PointMaze,
}

impl<'a> GoalOracle<'a> {
    pub fn new(maze: &'a PointMaze) -> Self {
        Self { maze }
    }

    pub fn action(&self, s: &[f64]) -> [f64; 2] {
        let layout = &self.maze.layout;
        let Some(cell) = layout.cell_of(s) else {
            return [0.0, 0.0];
        };
        let target = if cell == layout.goal() || !layout.cell(cell.0, cell.1).is_open() {
            self.maze.goal_point()
        } else {
            let d = layout.goal_distance(cell);
            let next = layout
                .neighbors(cell)
                .find(|nb| layout.goal_distance(*nb).checked_add(1) == Some(d))
                .unwrap_or(cell);
            layout.center(next)
        };
        toward(s, target, self.maze.step_scale)
    }
}

/// Action that moves from `s` toward `target`, at most one full step.
pub(crate) fn toward(s: &[f64], target: [f64; 2], step_scale: f64) -> [f64; 2] {
    let d = [target[0] - s[0], target[1] - s[1]];
    let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if norm == 0.0 {
        return [0.0, 0.0];
    }
    let scale = 1.0 / norm.max(step_scale);
    [(d[0] * scale).clamp(-1.0, 1.0), (d[1] * scale).clamp(-1.0, 1.0)]
}
