//! Continuous 2-D maze with velocity-command dynamics.
//!
//! Positions are in cell units: cell `(row, col)` covers `x ∈ [col, col+1)`,
//! `y ∈ [row, row+1)`. An action is a velocity command in `[-1, 1]²`; each
//! step moves the agent by `action·dt`, resolving the x axis before the y
//! axis and cancelling any axis move that would enter a wall.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const GOAL_REWARD: f64 = 100.0;
pub const OBS_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;
const START_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Wall,
    Free,
    StartRegion,
    Goal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn center(self) -> [f64; 2] {
        [self.col as f64 + 0.5, self.row as f64 + 0.5]
    }
}

/// Scalars that accompany a layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeParams {
    pub goal_radius: f64,
    pub dt: f64,
    pub max_episode_steps: u32,
}

impl Default for MazeParams {
    fn default() -> Self {
        Self { goal_radius: 0.4, dt: 0.1, max_episode_steps: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MazeSpec {
    grid: Vec<Vec<CellKind>>,
    pub goal_cell: Cell,
    pub start_cells: Vec<Cell>,
    pub goal_radius: f64,
    pub dt: f64,
    pub max_episode_steps: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub steps_elapsed: u32,
}

/// Velocity command; components are clamped to `[-1, 1]` before use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimitiveAction(pub [f64; 2]);

impl PrimitiveAction {
    pub fn clamped(self) -> [f64; 2] {
        [self.0[0].clamp(-1.0, 1.0), self.0[1].clamp(-1.0, 1.0)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    /// True when the episode ended by reaching the goal.
    pub success: bool,
}

pub fn load_maze(text: &str, params: MazeParams) -> Result<MazeSpec> {
    if !(params.goal_radius > 0.0 && params.goal_radius <= 0.5) {
        return Err(Error::InvalidConfig(format!("goal_radius {} outside (0, 0.5]", params.goal_radius)));
    }
    if !(params.dt > 0.0) || !params.dt.is_finite() {
        return Err(Error::InvalidConfig(format!("dt {} must be positive", params.dt)));
    }
    if params.max_episode_steps == 0 {
        return Err(Error::InvalidConfig("max_episode_steps must be ≥ 1".into()));
    }
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.is_empty()).collect();
    if lines.is_empty() {
        return Err(Error::MalformedLayout("empty layout".into()));
    }
    let width = lines[0].chars().count();
    let mut grid = Vec::with_capacity(lines.len());
    let mut goals = Vec::new();
    let mut starts = Vec::new();
    for (r, line) in lines.iter().enumerate() {
        if line.chars().count() != width {
            return Err(Error::MalformedLayout(format!("row {r} has {} columns, expected {width}", line.chars().count())));
        }
        let mut row = Vec::with_capacity(width);
        for (c, ch) in line.chars().enumerate() {
            let kind = match ch {
                '#' => CellKind::Wall,
                '.' => CellKind::Free,
                'S' => CellKind::StartRegion,
                'G' => CellKind::Goal,
                other => return Err(Error::MalformedLayout(format!("illegal character {other:?} at ({r}, {c})"))),
            };
            match kind {
                CellKind::Goal => goals.push(Cell::new(r, c)),
                CellKind::StartRegion => starts.push(Cell::new(r, c)),
                _ => {}
            }
            row.push(kind);
        }
        grid.push(row);
    }
    let height = grid.len();
    for r in 0..height {
        for c in 0..width {
            let edge = r == 0 || c == 0 || r + 1 == height || c + 1 == width;
            if edge && grid[r][c] != CellKind::Wall {
                return Err(Error::MalformedLayout(format!("boundary cell ({r}, {c}) is not a wall")));
            }
        }
    }
    let goal_cell = match goals.len() {
        0 => return Err(Error::NoGoal),
        1 => goals[0],
        n => return Err(Error::MultipleGoals(n)),
    };
    if starts.is_empty() {
        return Err(Error::MissingStartRegion);
    }
    let maze = MazeSpec {
        grid,
        goal_cell,
        start_cells: starts,
        goal_radius: params.goal_radius,
        dt: params.dt,
        max_episode_steps: params.max_episode_steps,
    };
    let reach = maze.distances_from(goal_cell);
    if let Some(s) = maze.start_cells.iter().find(|s| reach[s.row][s.col].is_none()) {
        return Err(Error::UnreachableGoal { row: s.row, col: s.col });
    }
    Ok(maze)
}

impl MazeSpec {
    pub fn width(&self) -> usize {
        self.grid[0].len()
    }

    pub fn height(&self) -> usize {
        self.grid.len()
    }

    pub fn kind(&self, cell: Cell) -> CellKind {
        self.grid[cell.row][cell.col]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        cell.row < self.height() && cell.col < self.width() && self.kind(cell) != CellKind::Wall
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for r in 0..self.height() {
            for c in 0..self.width() {
                if self.grid[r][c] != CellKind::Wall {
                    out.push(Cell::new(r, c));
                }
            }
        }
        out
    }

    /// Cell containing a point, if inside the grid.
    pub fn cell_at(&self, pos: [f64; 2]) -> Option<Cell> {
        if pos[0] < 0.0 || pos[1] < 0.0 {
            return None;
        }
        let (c, r) = (pos[0].floor() as usize, pos[1].floor() as usize);
        (r < self.height() && c < self.width()).then_some(Cell::new(r, c))
    }

    pub fn is_free_point(&self, pos: [f64; 2]) -> bool {
        self.cell_at(pos).is_some_and(|c| self.is_free(c))
    }

    /// 4-connected neighbours in (row, col) order: up, left, right, down.
    pub fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        let Cell { row, col } = cell;
        let cand = [
            (row.wrapping_sub(1), col),
            (row, col.wrapping_sub(1)),
            (row, col + 1),
            (row + 1, col),
        ];
        cand.into_iter().map(|(r, c)| Cell::new(r, c)).filter(move |c| self.is_free(*c))
    }

    /// Breadth-first shortest-path lengths (in edges) from `src`.
    pub fn distances_from(&self, src: Cell) -> Vec<Vec<Option<usize>>> {
        let mut dist = vec![vec![None; self.width()]; self.height()];
        if !self.is_free(src) {
            return dist;
        }
        dist[src.row][src.col] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[cur.row][cur.col].unwrap_or(0);
            for n in self.neighbors(cur) {
                if dist[n.row][n.col].is_none() {
                    dist[n.row][n.col] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn goal_center(&self) -> [f64; 2] {
        self.goal_cell.center()
    }

    pub fn reset(&self, rng: &mut impl Rng) -> EnvState {
        let cell = self.start_cells[rng.random_range(0..self.start_cells.len())];
        EnvState { pos: uniform_in_cell(cell, START_MARGIN, rng), vel: [0.0, 0.0], steps_elapsed: 0 }
    }

    /// Pure kinematics with wall sliding; no reward, no termination.
    pub fn transition(&self, s: &EnvState, a: PrimitiveAction) -> EnvState {
        let v = a.clamped();
        let mut pos = s.pos;
        for axis in 0..2 {
            let target = pos[axis] + v[axis] * self.dt;
            if self.axis_move_clear(pos, axis, target) {
                pos[axis] = target;
            }
        }
        EnvState { pos, vel: v, steps_elapsed: s.steps_elapsed + 1 }
    }

    /// Every cell crossed by moving `pos[axis]` to `target` must be free.
    fn axis_move_clear(&self, pos: [f64; 2], axis: usize, target: f64) -> bool {
        let from = pos[axis].floor() as i64;
        let to = target.floor() as i64;
        let (lo, hi) = if from <= to { (from, to) } else { (to, from) };
        (lo..=hi).all(|k| {
            if k < 0 {
                return false;
            }
            let mut p = pos;
            p[axis] = k as f64 + 0.5;
            self.is_free_point(p)
        })
    }

    pub fn step(&self, s: &EnvState, a: PrimitiveAction) -> StepOutcome {
        let next = self.transition(s, a);
        let success = self.in_goal(&next);
        let timeout = next.steps_elapsed >= self.max_episode_steps;
        StepOutcome { state: next, reward: if success { GOAL_REWARD } else { 0.0 }, done: success || timeout, success }
    }

    /// Closed ball test `‖pos − goal_center‖ ≤ goal_radius`.
    pub fn in_goal(&self, s: &EnvState) -> bool {
        let g = self.goal_center();
        let (dx, dy) = (s.pos[0] - g[0], s.pos[1] - g[1]);
        (dx * dx + dy * dy).sqrt() <= self.goal_radius
    }

    /// Network observation: position scaled by maze width/height, then velocity.
    pub fn observe(&self, s: &EnvState) -> [f32; OBS_DIM] {
        [
            (s.pos[0] / self.width() as f64) as f32,
            (s.pos[1] / self.height() as f64) as f32,
            s.vel[0] as f32,
            s.vel[1] as f32,
        ]
    }

    /// Inverse of the position part of [`Self::observe`].
    pub fn position_of(&self, obs: &[f32]) -> [f64; 2] {
        [obs[0] as f64 * self.width() as f64, obs[1] as f64 * self.height() as f64]
    }

    pub fn render_ascii(&self) -> String {
        let mut s = String::new();
        for row in &self.grid {
            for k in row {
                s.push(match k {
                    CellKind::Wall => '#',
                    CellKind::Free => '.',
                    CellKind::StartRegion => 'S',
                    CellKind::Goal => 'G',
                });
            }
            s.push('\n');
        }
        s
    }
}

pub fn uniform_in_cell(cell: Cell, margin: f64, rng: &mut impl Rng) -> [f64; 2] {
    [
        cell.col as f64 + rng.random_range(margin..1.0 - margin),
        cell.row as f64 + rng.random_range(margin..1.0 - margin),
    ]
}
