//! Offline data: grid planner, waypoint controller, dataset generation,
//! H-step window sampling and the `SKLD` dataset file format.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::maze::{uniform_in_cell, Cell, EnvState, MazeSpec, PrimitiveAction, ACTION_DIM, OBS_DIM};
use crate::rng;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SKLD";
const VERSION: u32 = 1;
const WAYPOINT_TOLERANCE: f64 = 0.2;
const PAIR_RETRIES: usize = 1000;

/// A* over 4-connected free cells, unit edge cost, Manhattan heuristic.
///
/// Ties on `f` are broken by smaller `h`, then by `(row, col)`, and
/// neighbours are expanded in `(row, col)` order, so the returned path is a
/// deterministic function of the maze and endpoints.
pub fn plan_path(maze: &MazeSpec, start: Cell, goal: Cell) -> Result<Vec<Cell>> {
    let no_path = || Error::NoPath(start.row, start.col, goal.row, goal.col);
    if !maze.is_free(start) || !maze.is_free(goal) {
        return Err(no_path());
    }
    let (w, h) = (maze.width(), maze.height());
    let idx = |c: Cell| c.row * w + c.col;
    let heuristic = |c: Cell| c.row.abs_diff(goal.row) + c.col.abs_diff(goal.col);
    let mut g = vec![usize::MAX; w * h];
    let mut parent: Vec<Option<Cell>> = vec![None; w * h];
    let mut closed = vec![false; w * h];
    let mut open = BinaryHeap::new();
    g[idx(start)] = 0;
    open.push(Reverse((heuristic(start), heuristic(start), start)));
    while let Some(Reverse((_, _, cur))) = open.pop() {
        if closed[idx(cur)] {
            continue;
        }
        closed[idx(cur)] = true;
        if cur == goal {
            let mut path = vec![cur];
            let mut c = cur;
            while let Some(p) = parent[idx(c)] {
                path.push(p);
                c = p;
            }
            path.reverse();
            return Ok(path);
        }
        let gc = g[idx(cur)];
        for n in maze.neighbors(cur) {
            let cand = gc + 1;
            if !closed[idx(n)] && cand < g[idx(n)] {
                g[idx(n)] = cand;
                parent[idx(n)] = Some(cur);
                let hn = heuristic(n);
                open.push(Reverse((cand + hn, hn, n)));
            }
        }
    }
    Err(no_path())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(T+1)·state_dim` values, row-major by time.
    pub states: Vec<f32>,
    /// `T·action_dim` values.
    pub actions: Vec<f32>,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self, action_dim: usize) -> usize {
        self.actions.len() / action_dim
    }

    pub fn state(&self, t: usize, state_dim: usize) -> &[f32] {
        &self.states[t * state_dim..(t + 1) * state_dim]
    }

    pub fn action(&self, t: usize, action_dim: usize) -> &[f32] {
        &self.actions[t * action_dim..(t + 1) * action_dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    TaskAgnostic = 0,
    Demonstration = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(kind: DatasetKind, trajectories: Vec<Trajectory>) -> Self {
        Self { kind, state_dim: OBS_DIM, action_dim: ACTION_DIM, trajectories }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::DatasetFormat("dataset has no trajectories".into()));
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            let bad = |msg: &str| Err(Error::DatasetFormat(format!("trajectory {i}: {msg}")));
            if t.actions.len() % self.action_dim != 0 || t.states.len() % self.state_dim != 0 {
                return bad("payload not a multiple of its dimension");
            }
            if t.states.len() / self.state_dim != t.actions.len() / self.action_dim + 1 {
                return bad("expected one more state than actions");
            }
            if t.actions.iter().any(|a| !(-1.0..=1.0).contains(a)) {
                return bad("action outside [-1, 1]");
            }
            if t.states.iter().any(|s| !s.is_finite()) {
                return bad("non-finite state");
            }
        }
        Ok(())
    }

    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.len(self.action_dim)).sum()
    }

    /// Iterates every stored state.
    pub fn states(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.trajectories.iter().flat_map(move |t| t.states.chunks_exact(self.state_dim))
    }

    /// Deterministic split: every trajectory whose index hash lands in the
    /// lowest `fraction` goes to validation. At least one trajectory stays on
    /// each side when there are two or more.
    pub fn split(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let n = self.trajectories.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| rng::child_seed(seed, "split", i as u64));
        let mut n_val = (n as f64 * fraction).round() as usize;
        if n >= 2 {
            n_val = n_val.clamp(1, n - 1);
        } else {
            n_val = 0;
        }
        let mut is_val = vec![false; n];
        for &i in &order[..n_val] {
            is_val[i] = true;
        }
        let pick = |want: bool| Dataset {
            trajectories: self
                .trajectories
                .iter()
                .zip(&is_val)
                .filter(|(_, v)| **v == want)
                .map(|(t, _)| t.clone())
                .collect(),
            ..*self
        };
        (pick(false), pick(true))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let u32le = |x: usize| (x as u32).to_le_bytes();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.kind as u32).to_le_bytes());
        buf.extend_from_slice(&u32le(self.state_dim));
        buf.extend_from_slice(&u32le(self.action_dim));
        buf.extend_from_slice(&u32le(self.trajectories.len()));
        for t in &self.trajectories {
            buf.extend_from_slice(&u32le(t.len(self.action_dim)));
            buf.push(t.success as u8);
            for x in t.states.iter().chain(&t.actions) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::DatasetFormat("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::DatasetFormat(format!("unsupported version {version}")));
        }
        let kind = match cur.u32()? {
            0 => DatasetKind::TaskAgnostic,
            1 => DatasetKind::Demonstration,
            k => return Err(Error::DatasetFormat(format!("unknown kind {k}"))),
        };
        let state_dim = cur.u32()? as usize;
        let action_dim = cur.u32()? as usize;
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::DatasetFormat("zero dimension".into()));
        }
        let n = cur.u32()? as usize;
        let mut trajectories = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let t = cur.u32()? as usize;
            let success = match cur.take(1)?[0] {
                0 => false,
                1 => true,
                b => return Err(Error::DatasetFormat(format!("bad success byte {b}"))),
            };
            let states = cur.f32s((t + 1) * state_dim)?;
            let actions = cur.f32s(t * action_dim)?;
            trajectories.push(Trajectory { states, actions, success });
        }
        if cur.pos != bytes.len() {
            return Err(Error::DatasetFormat("trailing bytes".into()));
        }
        Ok(Dataset { kind, state_dim, action_dim, trajectories })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::read_from(&mut f)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::DatasetFormat("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::DatasetFormat("size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Drives the agent along `path` with noisy unit-speed commands.
///
/// `path[0]` must be the cell holding `start.pos`. The controller aims at the
/// centre of the next waypoint and advances once within 0.2 cells; it stops
/// at the final waypoint or after `maze.max_episode_steps` steps. The
/// environment's goal test plays no part.
pub fn rollout_controller(
    maze: &MazeSpec,
    start: EnvState,
    path: &[Cell],
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Trajectory {
    let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("finite sigma"));
    let mut s = start;
    let mut states = maze.observe(&s).to_vec();
    let mut actions = Vec::new();
    let mut target = 1.min(path.len() - 1);
    let near = |s: &EnvState, c: Cell| {
        let m = c.center();
        (s.pos[0] - m[0]).hypot(s.pos[1] - m[1]) <= WAYPOINT_TOLERANCE
    };
    let mut success = false;
    for _ in 0..maze.max_episode_steps {
        while target + 1 < path.len() && near(&s, path[target]) {
            target += 1;
        }
        if target + 1 == path.len() && near(&s, path[target]) {
            success = true;
            break;
        }
        let m = path[target].center();
        let (dx, dy) = (m[0] - s.pos[0], m[1] - s.pos[1]);
        let norm = dx.hypot(dy).max(1e-12);
        let mut a = [dx / norm, dy / norm];
        if let Some(n) = &noise {
            a[0] += n.sample(rng);
            a[1] += n.sample(rng);
        }
        let a = PrimitiveAction(a).clamped();
        s = maze.transition(&s, PrimitiveAction(a));
        actions.extend(a.iter().map(|&x| x as f32));
        states.extend_from_slice(&maze.observe(&s));
    }
    if !success {
        success = near(&s, path[path.len() - 1]);
    }
    Trajectory { states, actions, success }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataGenConfig {
    pub noise_sigma: f64,
    /// Drop unsuccessful planner rollouts from the task-agnostic set.
    pub drop_failures: bool,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self { noise_sigma: 0.2, drop_failures: false }
    }
}

/// Planner rollouts between uniformly drawn distinct free cells.
///
/// Trajectory `i` draws from its own stream `child(seed, "datagen/traj", i)`,
/// so the result does not depend on generation order.
pub fn generate_task_agnostic(maze: &MazeSpec, n_traj: usize, cfg: DataGenConfig, seed: u64) -> Result<Dataset> {
    if n_traj == 0 {
        return Err(Error::InvalidConfig("n_traj must be ≥ 1".into()));
    }
    let free = maze.free_cells();
    if free.len() < 2 {
        return Err(Error::InvalidConfig("maze needs at least two free cells".into()));
    }
    let mut trajectories = Vec::with_capacity(n_traj);
    let mut index = 0u64;
    while trajectories.len() < n_traj {
        let mut rng = rng::stream(seed, "datagen/traj", index);
        index += 1;
        let mut planned = None;
        for _ in 0..PAIR_RETRIES {
            let a = free[rng.random_range(0..free.len())];
            let b = free[rng.random_range(0..free.len())];
            if a == b {
                continue;
            }
            if let Ok(path) = plan_path(maze, a, b) {
                planned = Some(path);
                break;
            }
        }
        let path = planned.ok_or(Error::DemoGenerationFailed(PAIR_RETRIES))?;
        let start = EnvState { pos: uniform_in_cell(path[0], 0.1, &mut rng), vel: [0.0; 2], steps_elapsed: 0 };
        let traj = rollout_controller(maze, start, &path, cfg.noise_sigma, &mut rng);
        if traj.success || !cfg.drop_failures {
            trajectories.push(traj);
        }
        if index as usize > n_traj * 100 + PAIR_RETRIES {
            return Err(Error::DemoGenerationFailed(index as usize));
        }
    }
    Ok(Dataset::new(DatasetKind::TaskAgnostic, trajectories))
}

/// Successful planner rollouts from points jittered around `start`.
pub fn generate_demos(
    maze: &MazeSpec,
    start: Cell,
    goal: Cell,
    k: usize,
    jitter: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be ≥ 1".into()));
    }
    plan_path(maze, start, goal)?;
    let max_attempts = 100 * k;
    let mut trajectories = Vec::with_capacity(k);
    for attempt in 0..max_attempts {
        if trajectories.len() == k {
            break;
        }
        let mut rng = rng::stream(seed, "datagen/demo", attempt as u64);
        let c = start.center();
        let pos = if jitter > 0.0 {
            [c[0] + rng.random_range(-jitter..=jitter), c[1] + rng.random_range(-jitter..=jitter)]
        } else {
            c
        };
        let Some(cell) = maze.cell_at(pos).filter(|&cell| maze.is_free(cell)) else { continue };
        let Ok(path) = plan_path(maze, cell, goal) else { continue };
        let s0 = EnvState { pos, vel: [0.0; 2], steps_elapsed: 0 };
        let traj = rollout_controller(maze, s0, &path, noise_sigma, &mut rng);
        let last = traj.state(traj.len(ACTION_DIM), OBS_DIM);
        let end = EnvState { pos: maze.position_of(last), vel: [0.0; 2], steps_elapsed: 0 };
        if traj.success && maze.in_goal(&end) {
            trajectories.push(traj);
        }
    }
    if trajectories.len() < k {
        return Err(Error::DemoGenerationFailed(max_attempts));
    }
    Ok(Dataset::new(DatasetKind::Demonstration, trajectories))
}

/// `H` consecutive states and the `H−1` actions between them.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillWindow {
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
}

/// Uniform sampler over every `(trajectory, offset)` pair that fits an
/// `H`-state window.
#[derive(Debug, Clone)]
pub struct WindowSampler {
    horizon: usize,
    /// `(trajectory index, cumulative window count through it)`.
    cumulative: Vec<(usize, usize)>,
}

impl WindowSampler {
    pub fn new(dataset: &Dataset, horizon: usize) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::InvalidConfig("window horizon must be ≥ 2".into()));
        }
        let mut total = 0;
        let mut cumulative = Vec::new();
        for (i, t) in dataset.trajectories.iter().enumerate() {
            let n_states = t.len(dataset.action_dim) + 1;
            if n_states >= horizon {
                total += n_states - horizon + 1;
                cumulative.push((i, total));
            }
        }
        if total == 0 {
            return Err(Error::NoValidWindow(horizon));
        }
        Ok(Self { horizon, cumulative })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_windows(&self) -> usize {
        self.cumulative.last().map_or(0, |c| c.1)
    }

    /// Maps a flat window number to `(trajectory, offset)`.
    pub fn locate(&self, k: usize) -> (usize, usize) {
        let j = self.cumulative.partition_point(|&(_, c)| c <= k);
        let before = if j == 0 { 0 } else { self.cumulative[j - 1].1 };
        (self.cumulative[j].0, k - before)
    }

    pub fn sample_location(&self, rng: &mut impl Rng) -> (usize, usize) {
        self.locate(rng.random_range(0..self.num_windows()))
    }

    pub fn window(&self, dataset: &Dataset, traj: usize, offset: usize) -> SkillWindow {
        let t = &dataset.trajectories[traj];
        let (sd, ad, h) = (dataset.state_dim, dataset.action_dim, self.horizon);
        SkillWindow {
            states: t.states[offset * sd..(offset + h) * sd].to_vec(),
            actions: t.actions[offset * ad..(offset + h - 1) * ad].to_vec(),
        }
    }

    pub fn sample(&self, dataset: &Dataset, rng: &mut impl Rng) -> SkillWindow {
        let (traj, offset) = self.sample_location(rng);
        self.window(dataset, traj, offset)
    }

    /// Every `stride`-th window in flat order, for deterministic evaluation.
    pub fn strided(&self, dataset: &Dataset, stride: usize) -> Vec<SkillWindow> {
        (0..self.num_windows())
            .step_by(stride.max(1))
            .map(|k| {
                let (t, o) = self.locate(k);
                self.window(dataset, t, o)
            })
            .collect()
    }
}

pub fn sample_window(dataset: &Dataset, horizon: usize, rng: &mut impl Rng) -> Result<SkillWindow> {
    Ok(WindowSampler::new(dataset, horizon)?.sample(dataset, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{load_maze, MazeParams};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corridor() -> MazeSpec {
        load_maze("#######\n#S...G#\n#######", MazeParams::default()).unwrap()
    }

    #[test]
    fn corridor_path_and_trivial_path() {
        let m = corridor();
        let p = plan_path(&m, Cell::new(1, 1), Cell::new(1, 5)).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(plan_path(&m, Cell::new(1, 2), Cell::new(1, 2)).unwrap(), vec![Cell::new(1, 2)]);
        assert!(matches!(plan_path(&m, Cell::new(0, 0), Cell::new(1, 2)), Err(Error::NoPath(..))));
    }

    #[test]
    fn noiseless_corridor_rollout_is_monotone() {
        let m = corridor();
        let path = plan_path(&m, Cell::new(1, 1), Cell::new(1, 5)).unwrap();
        let s0 = EnvState { pos: [1.5, 1.5], vel: [0.0; 2], steps_elapsed: 0 };
        let t = rollout_controller(&m, s0, &path, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(t.success);
        let xs: Vec<f32> = t.states.chunks(OBS_DIM).map(|s| s[0]).collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn noisy_rollout_is_reproducible() {
        let m = corridor();
        let path = plan_path(&m, Cell::new(1, 1), Cell::new(1, 5)).unwrap();
        let s0 = EnvState { pos: [1.3, 1.6], vel: [0.0; 2], steps_elapsed: 0 };
        let a = rollout_controller(&m, s0, &path, 0.2, &mut ChaCha8Rng::seed_from_u64(4));
        let b = rollout_controller(&m, s0, &path, 0.2, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        let bits = |t: &Trajectory| t.states.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn task_agnostic_on_minimal_maze() {
        let m = load_maze("#####\n#S.G#\n#####", MazeParams::default()).unwrap();
        let d = generate_task_agnostic(&m, 1, DataGenConfig::default(), 5).unwrap();
        assert_eq!(d.trajectories.len(), 1);
        d.validate().unwrap();
    }

    #[test]
    fn demos_without_jitter_or_noise_are_identical() {
        let m = corridor();
        let d = generate_demos(&m, Cell::new(1, 1), Cell::new(1, 5), 2, 0.0, 0.0, 1).unwrap();
        assert_eq!(d.trajectories[0], d.trajectories[1]);
    }

    #[test]
    fn demos_end_in_goal() {
        let m = load_maze(include_str!("../../../mazes/reference20.txt"), MazeParams::default()).unwrap();
        let d = generate_demos(&m, Cell::new(18, 2), m.goal_cell, 5, 0.5, 0.2, 3).unwrap();
        assert_eq!(d.trajectories.len(), 5);
        for t in &d.trajectories {
            let last = t.state(t.len(2), 4);
            let s = EnvState { pos: m.position_of(last), vel: [0.0; 2], steps_elapsed: 0 };
            assert!(m.in_goal(&s));
        }
        d.validate().unwrap();
    }

    #[test]
    fn exact_length_trajectory_has_single_window() {
        let traj = Trajectory { states: vec![0.0; 10 * 4], actions: vec![0.0; 9 * 2], success: true };
        let d = Dataset::new(DatasetKind::TaskAgnostic, vec![traj]);
        let s = WindowSampler::new(&d, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(s.sample_location(&mut rng), (0, 0));
        }
        assert!(matches!(WindowSampler::new(&d, 11), Err(Error::NoValidWindow(11))));
    }

    #[test]
    fn window_starts_are_uniform() {
        // Two trajectories with 3 and 5 windows: 8 equally likely cells.
        let mk = |n: usize| Trajectory { states: vec![0.0; (n + 1) * 4], actions: vec![0.0; n * 2], success: false };
        let d = Dataset::new(DatasetKind::TaskAgnostic, vec![mk(11), mk(2), mk(13)]);
        let s = WindowSampler::new(&d, 10).unwrap();
        assert_eq!(s.num_windows(), 8);
        let mut counts = std::collections::BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        for _ in 0..n {
            *counts.entry(s.sample_location(&mut rng)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 8);
        let p = 1.0 / 8.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (&(traj, _), &c) in &counts {
            assert_ne!(traj, 1);
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn window_contents() {
        let states: Vec<f32> = (0..12 * 4).map(|x| x as f32).collect();
        let actions: Vec<f32> = (0..11 * 2).map(|x| x as f32 / 100.0).collect();
        let d = Dataset::new(DatasetKind::TaskAgnostic, vec![Trajectory { states, actions, success: true }]);
        let s = WindowSampler::new(&d, 10).unwrap();
        let w = s.window(&d, 0, 2);
        assert_eq!(w.states.len(), 40);
        assert_eq!(w.actions.len(), 18);
        assert_eq!(w.states[0], 8.0);
        assert_eq!(w.actions[0], 0.04);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let d = generate_task_agnostic(&corridor(), 2, DataGenConfig::default(), 0).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert!(Dataset::read_from(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Dataset::read_from(&mut &bad[..]).is_err());
        assert_eq!(Dataset::read_from(&mut &buf[..]).unwrap(), d);
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let d = generate_task_agnostic(&corridor(), 20, DataGenConfig::default(), 0).unwrap();
        let (train, val) = d.split(0.1, 3);
        assert_eq!(val.trajectories.len(), 2);
        assert_eq!(train.trajectories.len() + val.trajectories.len(), 20);
        for t in &val.trajectories {
            assert!(!train.trajectories.contains(t));
        }
    }

    proptest! {
        #[test]
        fn file_round_trip_is_bitwise(
            trajs in prop::collection::vec(
                (0usize..6, any::<bool>()).prop_flat_map(|(t, ok)| (
                    prop::collection::vec(any::<f32>(), (t + 1) * 4),
                    prop::collection::vec(any::<f32>(), t * 2),
                    Just(ok),
                )),
                1..5,
            )
        ) {
            let d = Dataset::new(
                DatasetKind::Demonstration,
                trajs.into_iter().map(|(states, actions, success)| Trajectory { states, actions, success }).collect(),
            );
            let mut buf = Vec::new();
            d.write_to(&mut buf).unwrap();
            let back = Dataset::read_from(&mut &buf[..]).unwrap();
            let bits = |d: &Dataset| d.trajectories.iter()
                .map(|t| (t.states.iter().chain(&t.actions).map(|x| x.to_bits()).collect::<Vec<_>>(), t.success))
                .collect::<Vec<_>>();
            prop_assert_eq!(bits(&d), bits(&back));
            prop_assert_eq!(back.kind, DatasetKind::Demonstration);
        }
    }
}
