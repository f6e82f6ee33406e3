#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use skild_core::agent::RlConfig;
use skild_core::data::{generate_demos, generate_task_agnostic, DataGenConfig, Dataset};
use skild_core::guidance::{train_guidance, Guidance, GuidanceConfig};
use skild_core::maze::{load_maze, Cell, MazeParams, MazeSpec};
use skild_core::skills::{train_skill_model, SkillModel, SkillModelConfig};

pub const SMALL_MAZE: &str = "\
#########
#S..#..G#
#.#.#.#.#
#.#...#.#
#.......#
#########";

/// Tiny trained artifacts for fast end-to-end tests.
pub struct Fixture {
    pub maze: MazeSpec,
    pub task_agnostic: Dataset,
    pub demos: Dataset,
    pub skills: SkillModel<f32>,
    pub guidance: Guidance,
    pub guidance_cfg: GuidanceConfig,
}

pub fn small_skill_cfg() -> SkillModelConfig {
    SkillModelConfig {
        horizon: 5,
        z_dim: 3,
        encoder_hidden: 16,
        decoder_hidden: vec![16, 16],
        prior_hidden: vec![16, 16],
        batch_size: 16,
        train_steps: 40,
        log_every: 0,
        ..SkillModelConfig::default()
    }
}

pub fn fixture() -> Fixture {
    let params = MazeParams { max_episode_steps: 150, ..MazeParams::default() };
    let maze = load_maze(SMALL_MAZE, params).unwrap();
    let task_agnostic = generate_task_agnostic(&maze, 40, DataGenConfig::default(), 1).unwrap();
    let demos = generate_demos(&maze, Cell::new(1, 1), maze.goal_cell, 2, 0.2, 0.1, 2).unwrap();
    let (skills, _) = train_skill_model(&small_skill_cfg(), &task_agnostic, 3).unwrap();
    let guidance_cfg = GuidanceConfig {
        posterior_steps: 30,
        posterior_batch: 16,
        disc_steps: 30,
        disc_batch: 32,
        disc_hidden: vec![8, 8],
        finetune_steps: 3,
        log_every: 0,
        ..GuidanceConfig::default()
    };
    let (guidance, _) = train_guidance(&skills, &task_agnostic, &demos, &guidance_cfg, 4).unwrap();
    Fixture { maze, task_agnostic, demos, skills, guidance, guidance_cfg }
}

pub fn small_rl_cfg() -> RlConfig {
    RlConfig {
        total_env_steps: 500,
        warmup_env_steps: 150,
        batch_size: 16,
        critic_hidden: vec![16, 16],
        flat_policy_hidden: vec![16, 16],
        eval_every: 250,
        eval_episodes: 1,
        bc_steps: 20,
        log_every: 0,
        flat_updates_per_transition: 0.5,
        ..RlConfig::default()
    }
}

/// Random 15×15 grid with a wall border and ~30% interior walls.
pub fn random_grid(rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let n = 15;
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    if r == 0 || c == 0 || r == n - 1 || c == n - 1 || rng.random_bool(0.3) {
                        b'#'
                    } else {
                        b'.'
                    }
                })
                .collect()
        })
        .collect()
}

/// Shortest 4-connected path length in cells (inclusive), by breadth-first search.
pub fn bfs_len(grid: &[Vec<u8>], a: (usize, usize), b: (usize, usize)) -> Option<usize> {
    let mut dist = vec![vec![usize::MAX; grid[0].len()]; grid.len()];
    let mut q = VecDeque::from([a]);
    dist[a.0][a.1] = 1;
    while let Some((r, c)) = q.pop_front() {
        if (r, c) == b {
            return Some(dist[r][c]);
        }
        for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (nr, nc) = ((r as i64 + dr) as usize, (c as i64 + dc) as usize);
            if grid[nr][nc] != b'#' && dist[nr][nc] == usize::MAX {
                dist[nr][nc] = dist[r][c] + 1;
                q.push_back((nr, nc));
            }
        }
    }
    None
}

pub fn free_cells(grid: &[Vec<u8>]) -> Vec<(usize, usize)> {
    (0..grid.len()).flat_map(|r| (0..grid[r].len()).map(move |c| (r, c))).filter(|&(r, c)| grid[r][c] != b'#').collect()
}

/// Place `S` and `G` in one connected component so the layout validates.
pub fn to_maze(mut grid: Vec<Vec<u8>>, rng: &mut ChaCha8Rng) -> Option<(Vec<Vec<u8>>, MazeSpec)> {
    let free = free_cells(&grid);
    if free.len() < 2 {
        return None;
    }
    let s = free[rng.random_range(0..free.len())];
    let reachable: Vec<_> = free.iter().copied().filter(|&g| g != s && bfs_len(&grid, s, g).is_some()).collect();
    if reachable.is_empty() {
        return None;
    }
    let g = reachable[rng.random_range(0..reachable.len())];
    grid[s.0][s.1] = b'S';
    grid[g.0][g.1] = b'G';
    let text: Vec<String> = grid.iter().map(|r| String::from_utf8(r.clone()).unwrap()).collect();
    let maze = load_maze(&text.join("\n"), MazeParams::default()).ok()?;
    Some((grid, maze))
}
