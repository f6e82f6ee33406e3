//! Support heatmaps, rollout maps and learning curves as standalone SVG,
//! each paired with a CSV of the plotted numbers.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use skild_nn::{kl_terms, tanh_squash};

use crate::data::Dataset;
use crate::guidance::Guidance;
use crate::harness::Aggregate;
use crate::maze::{Cell, MazeSpec};
use crate::nets::{batch_from_rows, Net};
use crate::skills::SkillExecutor;
use crate::Result;

const PX: f64 = 24.0;

/// Values on a regular probe grid; `None` inside walls.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGrid {
    pub density: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Option<f64>>,
}

impl ProbeGrid {
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.values[r * self.cols + c]
    }

    /// Probe position of sub-cell `(r, c)` in maze coordinates.
    pub fn position(&self, r: usize, c: usize) -> [f64; 2] {
        let d = self.density as f64;
        [(c as f64 + 0.5) / d, (r as f64 + 0.5) / d]
    }

    /// Mean value over probes inside `cell`.
    pub fn cell_mean(&self, cell: Cell) -> Option<f64> {
        let d = self.density;
        let vals: Vec<f64> =
            (0..d).flat_map(|i| (0..d).map(move |j| (cell.row * d + i, cell.col * d + j))).filter_map(|(r, c)| self.get(r, c)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,value\n");
        for r in 0..self.rows {
            for c in 0..self.cols {
                if let Some(v) = self.get(r, c) {
                    let [x, y] = self.position(r, c);
                    let _ = writeln!(s, "{x:.6},{y:.6},{v:.6}");
                }
            }
        }
        s
    }
}

/// Evaluate `f` on zero-velocity probe observations over every free cell.
pub fn probe_grid(maze: &MazeSpec, density: usize, mut f: impl FnMut(&[[f32; 4]]) -> Vec<f64>) -> ProbeGrid {
    let density = density.max(1);
    let (rows, cols) = (maze.height() * density, maze.width() * density);
    let mut probes = Vec::new();
    let mut slots = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let p = [(c as f64 + 0.5) / density as f64, (r as f64 + 0.5) / density as f64];
            if maze.is_free_point(p) {
                let s = crate::maze::EnvState { pos: p, vel: [0.0, 0.0], steps_elapsed: 0 };
                probes.push(maze.observe(&s));
                slots.push(r * cols + c);
            }
        }
    }
    let mut values = vec![None; rows * cols];
    if !probes.is_empty() {
        for (slot, v) in slots.into_iter().zip(f(&probes)) {
            values[slot] = Some(v);
        }
    }
    ProbeGrid { density, rows, cols, values }
}

pub struct SupportMaps {
    pub discriminator: ProbeGrid,
    pub kl_posterior: ProbeGrid,
    pub kl_prior: ProbeGrid,
}

fn rows_of(obs: &[[f32; 4]]) -> Vec<&[f32]> {
    obs.iter().map(|o| &o[..]).collect()
}

/// `D(s)`, `KL(π‖q)` and `KL(π‖p)` over the maze.
pub fn support_maps(maze: &MazeSpec, guidance: &Guidance, prior: &Net<f32>, policy: &Net<f32>, density: usize) -> Result<SupportMaps> {
    let disc = guidance.discriminator.folded()?;
    let post = guidance.posterior.folded()?;
    let prior = prior.folded()?;
    let kl_to = |target: &Net<f32>| {
        probe_grid(maze, density, |obs| {
            let x = batch_from_rows::<f32>(&rows_of(obs));
            let pi = policy.predict_gaussian(&x).expect("observation width");
            let q = target.predict_gaussian(&x).expect("observation width");
            (0..obs.len())
                .map(|i| kl_terms(pi.mean.row(i), pi.log_std.row(i), q.mean.row(i), q.log_std.row(i)) as f64)
                .collect()
        })
    };
    Ok(SupportMaps {
        discriminator: probe_grid(maze, density, |obs| disc.prob(&batch_from_rows(&rows_of(obs))).expect("observation width")),
        kl_posterior: kl_to(&post),
        kl_prior: kl_to(&prior),
    })
}

/// RGB on a dark-blue → teal → yellow ramp for `t ∈ [0, 1]`.
fn ramp(t: f64) -> String {
    let stops = [(0.27, 0.00, 0.33), (0.13, 0.57, 0.55), (0.99, 0.91, 0.14)];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let (i, f) = if t >= 2.0 { (1, 1.0) } else { (t.floor() as usize, t.fract()) };
    let (a, b) = (stops[i], stops[i + 1]);
    let mix = |x: f64, y: f64| ((x + (y - x) * f) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn svg_open(w: f64, h: f64) -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.1} {h:.1}\">\n")
}

fn walls(maze: &MazeSpec) -> String {
    let mut s = String::new();
    for r in 0..maze.height() {
        for c in 0..maze.width() {
            if !maze.is_free(Cell::new(r, c)) {
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{PX:.1}\" height=\"{PX:.1}\" fill=\"#333\"/>",
                    c as f64 * PX,
                    r as f64 * PX
                );
            }
        }
    }
    s
}

pub fn heatmap_svg(maze: &MazeSpec, grid: &ProbeGrid, title: &str) -> String {
    let (w, h) = (maze.width() as f64 * PX, maze.height() as f64 * PX);
    let mut s = svg_open(w, h + 20.0);
    let _ = writeln!(s, "<title>{title}</title>");
    let vals: Vec<f64> = grid.values.iter().flatten().copied().collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = PX / grid.density as f64;
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            if let Some(v) = grid.get(r, c) {
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{}\"/>",
                    c as f64 * cell,
                    r as f64 * cell,
                    ramp((v - lo) / span)
                );
            }
        }
    }
    s += &walls(maze);
    let _ = writeln!(s, "<text x=\"4\" y=\"{:.0}\" font-size=\"12\" font-family=\"sans-serif\">{title}: {lo:.3} to {hi:.3}</text>", h + 15.0);
    s.push_str("</svg>\n");
    s
}

/// Write `discriminator`, `kl_posterior` and `kl_prior` heatmaps with CSVs.
pub fn write_support_maps(dir: &Path, maze: &MazeSpec, maps: &SupportMaps) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, g) in [("discriminator", &maps.discriminator), ("kl_posterior", &maps.kl_posterior), ("kl_prior", &maps.kl_prior)] {
        std::fs::write(dir.join(format!("{name}.svg")), heatmap_svg(maze, g, name))?;
        std::fs::write(dir.join(format!("{name}.csv")), g.to_csv())?;
    }
    Ok(())
}

/// Visited positions of skill rollouts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutMap {
    pub episodes: usize,
    pub goal_hits: usize,
    pub positions: Vec<[f64; 2]>,
    /// Number of positions recorded per episode, in order.
    pub episode_lengths: Vec<usize>,
}

impl RolloutMap {
    pub fn goal_hit_fraction(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.goal_hits as f64 / self.episodes as f64
        }
    }

    pub fn visited_cells(&self) -> BTreeSet<Cell> {
        self.positions.iter().map(|p| Cell::new(p[1].floor() as usize, p[0].floor() as usize)).collect()
    }

    /// Fraction of visited positions that lie in `cells`.
    pub fn rate_in(&self, cells: &BTreeSet<Cell>) -> f64 {
        if self.positions.is_empty() {
            return 0.0;
        }
        let hits = self.positions.iter().filter(|p| cells.contains(&Cell::new(p[1].floor() as usize, p[0].floor() as usize))).count();
        hits as f64 / self.positions.len() as f64
    }

    /// Mean over episodes of the share of `cells` that the episode reaches.
    pub fn coverage_of(&self, cells: &BTreeSet<Cell>) -> f64 {
        if self.episode_lengths.is_empty() || cells.is_empty() {
            return 0.0;
        }
        let mut start = 0;
        let mut acc = 0.0;
        for &n in &self.episode_lengths {
            let reached: BTreeSet<Cell> = self.positions[start..start + n]
                .iter()
                .map(|p| Cell::new(p[1].floor() as usize, p[0].floor() as usize))
                .filter(|c| cells.contains(c))
                .collect();
            acc += reached.len() as f64 / cells.len() as f64;
            start += n;
        }
        acc / self.episode_lengths.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# episodes {} goal_hits {}\nx,y\n", self.episodes, self.goal_hits);
        for p in &self.positions {
            let _ = writeln!(s, "{:.6},{:.6}", p[0], p[1]);
        }
        s
    }
}

/// Cells any demonstration passes through.
pub fn demo_cells(demos: &Dataset, maze: &MazeSpec) -> BTreeSet<Cell> {
    demos.states().map(|s| maze.position_of(s)).map(|p| Cell::new(p[1].floor() as usize, p[0].floor() as usize)).collect()
}

/// Episodes from the start region where every macro-step samples a skill
/// from `dist(s)` and executes it for `H` steps.
pub fn rollout_map(
    maze: &MazeSpec,
    dist: &Net<f32>,
    executor: &SkillExecutor,
    squash_scale: f32,
    episodes: usize,
    rng: &mut impl Rng,
) -> Result<RolloutMap> {
    let dist = dist.folded()?;
    let mut map = RolloutMap { episodes, ..Default::default() };
    for _ in 0..episodes {
        let mut s = maze.reset(rng);
        let before = map.positions.len();
        loop {
            let g = dist.predict_gaussian(&batch_from_rows(&[&maze.observe(&s)[..]]))?;
            let z: Vec<f32> = (0..g.dim())
                .map(|j| {
                    let u = g.mean.get(0, j) + g.log_std.get(0, j).exp() * rng.sample::<f64, _>(StandardNormal) as f32;
                    tanh_squash(u, squash_scale)
                })
                .collect();
            let r = executor.execute(maze, s, &z, executor.horizon);
            map.positions.extend(r.steps.iter().map(|x| maze.position_of(&x.0)));
            s = r.final_state;
            if r.done {
                map.goal_hits += r.success as usize;
                break;
            }
        }
        map.episode_lengths.push(map.positions.len() - before);
    }
    Ok(map)
}

pub fn rollout_svg(maze: &MazeSpec, map: &RolloutMap, title: &str) -> String {
    let (w, h) = (maze.width() as f64 * PX, maze.height() as f64 * PX);
    let mut s = svg_open(w, h + 20.0);
    let _ = writeln!(s, "<title>{title}</title>");
    s += &walls(maze);
    let g = maze.goal_center();
    let _ = writeln!(
        s,
        "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"{:.1}\" fill=\"none\" stroke=\"#c00\" stroke-width=\"2\"/>",
        g[0] * PX,
        g[1] * PX,
        maze.goal_radius * PX
    );
    for p in &map.positions {
        let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"0.8\" fill=\"#1f77b4\" fill-opacity=\"0.3\"/>", p[0] * PX, p[1] * PX);
    }
    let _ = writeln!(
        s,
        "<text x=\"4\" y=\"{:.0}\" font-size=\"12\" font-family=\"sans-serif\">{title}: goal hits {}/{}</text>",
        h + 15.0,
        map.goal_hits,
        map.episodes
    );
    s.push_str("</svg>\n");
    s
}

const PALETTE: [&str; 10] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Mean ± std curves of `column` per method; returns `(svg, csv)`.
pub fn learning_curves(methods: &[(String, Aggregate)], column: &str) -> (String, String) {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let mut csv = String::from("method,env_steps,mean,std\n");
    let series: Vec<(&str, &[f64], &[f64], &[f64])> = methods
        .iter()
        .filter_map(|(name, a)| a.column(column).map(|(mu, sd)| (name.as_str(), &a.steps[..], mu, sd)))
        .collect();
    let x_max = series.iter().flat_map(|s| s.1.iter().copied()).fold(1.0, f64::max);
    let y_lo = series.iter().flat_map(|s| s.2.iter().zip(s.3).map(|(a, b)| a - b)).fold(0.0, f64::min);
    let y_hi = series.iter().flat_map(|s| s.2.iter().zip(s.3).map(|(a, b)| a + b)).fold(1.0, f64::max);
    let sx = |x: f64| m + x / x_max * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y_lo) / (y_hi - y_lo) * (h - 2.0 * m);
    let mut svg = svg_open(w, h);
    let _ = writeln!(svg, "<title>{column}</title>");
    let _ = writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/><line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{0}\" stroke=\"black\"/>",
        h - m,
        w - m
    );
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\">env steps (max {x_max})</text>", w / 2.0 - 40.0, h - 15.0);
    let _ = writeln!(svg, "<text x=\"5\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\">{column} [{y_lo:.2}, {y_hi:.2}]</text>", m - 10.0);
    for (k, (name, xs, mu, sd)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for i in 0..xs.len() {
            let _ = writeln!(csv, "{name},{},{:.6},{:.6}", xs[i], mu[i], sd[i]);
        }
        if sd.iter().any(|&v| v > 0.0) {
            let upper = xs.iter().zip(mu.iter().zip(sd.iter())).map(|(&x, (&a, &b))| format!("{:.1},{:.1}", sx(x), sy(a + b)));
            let lower = xs.iter().zip(mu.iter().zip(sd.iter())).rev().map(|(&x, (&a, &b))| format!("{:.1},{:.1}", sx(x), sy(a - b)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(svg, "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>", pts.join(" "));
        }
        let line: Vec<String> = xs.iter().zip(mu.iter()).map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", line.join(" "));
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\" fill=\"{color}\">{name}</text>",
            w - m - 90.0,
            m + 15.0 * k as f64
        );
    }
    svg.push_str("</svg>\n");
    (svg, csv)
}
