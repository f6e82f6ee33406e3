//! Experiment orchestration: configuration, the staged pipeline with its
//! manifest, and aggregation of metrics across seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use skild_nn::Checkpoint;

use crate::agent::{self, metrics_csv, Mode, RlConfig, RlInputs};
use crate::data::{generate_demos, generate_task_agnostic, DataGenConfig, Dataset};
use crate::guidance::{train_guidance, Guidance, GuidanceConfig};
use crate::maze::{load_maze, Cell, MazeParams, MazeSpec};
use crate::render;
use crate::skills::{train_skill_model, SkillModel, SkillModelConfig};
use crate::{rng, Error, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "SKILD_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeSection {
    /// Layout file, relative to the config file's directory.
    pub layout: PathBuf,
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_max_steps")]
    pub max_episode_steps: u32,
    /// Demonstration start cell `[row, col]`; the first start cell if absent.
    #[serde(default)]
    pub demo_start: Option<[usize; 2]>,
}

fn default_goal_radius() -> f64 {
    MazeParams::default().goal_radius
}
fn default_dt() -> f64 {
    MazeParams::default().dt
}
fn default_max_steps() -> u32 {
    MazeParams::default().max_episode_steps
}

impl MazeSection {
    pub fn params(&self) -> MazeParams {
        MazeParams { goal_radius: self.goal_radius, dt: self.dt, max_episode_steps: self.max_episode_steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataGenSection {
    pub n_traj: usize,
    pub noise_sigma: f64,
    pub drop_failures: bool,
    pub demos: usize,
    pub demo_jitter: f64,
    pub demo_noise_sigma: f64,
}

impl Default for DataGenSection {
    fn default() -> Self {
        Self { n_traj: 3000, noise_sigma: 0.2, drop_failures: false, demos: 5, demo_jitter: 0.5, demo_noise_sigma: 0.2 }
    }
}

/// A group of RL runs: every listed mode under every listed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunGroup {
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub maze: MazeSection,
    #[serde(default)]
    pub datagen: DataGenSection,
    #[serde(default)]
    pub skill_model: SkillModelConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    /// Shared RL settings; `mode` is taken from each run group.
    #[serde(default)]
    pub rl: RlConfig,
    #[serde(default)]
    pub runs: Vec<RunGroup>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn layout_path(&self) -> PathBuf {
        self.base_dir.join(&self.maze.layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        let layout = self.layout_path();
        if !layout.is_file() {
            return Err(Error::Config(format!("maze layout {} not found", layout.display())));
        }
        let d = &self.datagen;
        if d.n_traj == 0 || d.demos == 0 {
            return Err(Error::Config("datagen: n_traj and demos must be ≥ 1".into()));
        }
        if !(d.noise_sigma >= 0.0) || !(d.demo_noise_sigma >= 0.0) || !(d.demo_jitter >= 0.0) {
            return Err(Error::Config("datagen: noise and jitter must be non-negative".into()));
        }
        self.skill_model.validate()?;
        self.guidance.validate()?;
        self.rl.validate()?;
        for g in &self.runs {
            for &mode in &g.modes {
                self.rl_config(mode).validate()?;
            }
        }
        Ok(())
    }

    pub fn rl_config(&self, mode: Mode) -> RlConfig {
        RlConfig { mode, ..self.rl.clone() }
    }

    /// `(mode, seed)` pairs in run order, without duplicates.
    pub fn run_list(&self) -> Vec<(Mode, u64)> {
        let mut out = Vec::new();
        for g in &self.runs {
            for &m in &g.modes {
                for &s in &g.seeds {
                    if !out.contains(&(m, s)) {
                        out.push((m, s));
                    }
                }
            }
        }
        out
    }

    /// Canonical serialization; the basis of every stage key.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn key_of(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn toml_of<T: Serialize>(x: &T) -> String {
    toml::to_string(x).expect("section serializes")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub package_version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Option<Self>> {
        match std::fs::read_to_string(path) {
            Ok(s) => toml::from_str(&s).map(Some).map_err(|e| Error::Config(format!("manifest: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self).expect("manifest serializes"))?;
        Ok(())
    }
}

/// Which stages ran and which were reused.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineReport {
    pub out_dir: PathBuf,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
}

/// Output root: `SKILD_OUT_DIR` when set, else `fallback`.
pub fn output_root(fallback: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => fallback.to_path_buf(),
    }
}

/// Relative paths are placed under `SKILD_OUT_DIR` when it is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) if !d.is_empty() && path.is_relative() => PathBuf::from(d).join(path),
        _ => path.to_path_buf(),
    }
}

struct Stages<'a> {
    dir: &'a Path,
    manifest: Manifest,
    report: PipelineReport,
}

impl Stages<'_> {
    /// Run `body` unless the manifest records `name` with the same key and
    /// every output exists.
    fn run(&mut self, name: &str, key: &str, outputs: &[String], body: impl FnOnce() -> Result<()>) -> Result<()> {
        let done = self
            .manifest
            .stages
            .get(name)
            .is_some_and(|r| r.key == key && r.outputs.iter().all(|o| self.dir.join(o).exists()));
        if done {
            log::info!("stage {name}: up to date");
            self.report.skipped.push(name.to_string());
            return Ok(());
        }
        log::info!("stage {name}: running");
        body().map_err(|e| e.in_stage(name))?;
        self.manifest.stages.insert(name.to_string(), StageRecord { key: key.to_string(), outputs: outputs.to_vec() });
        self.manifest.save(&self.dir.join("manifest.toml"))?;
        self.report.executed.push(name.to_string());
        Ok(())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn demo_start(cfg: &ExperimentConfig, maze: &MazeSpec) -> Cell {
    match cfg.maze.demo_start {
        Some([r, c]) => Cell::new(r, c),
        None => maze.start_cells[0],
    }
}

fn dataset_metrics(ds: &[(&str, &Dataset)]) -> String {
    let mut s = String::from("dataset,trajectories,transitions,success_rate\n");
    for (name, d) in ds {
        let wins = d.trajectories.iter().filter(|t| t.success).count();
        let _ = writeln!(
            s,
            "{name},{},{},{:.6}",
            d.trajectories.len(),
            d.num_transitions(),
            wins as f64 / d.trajectories.len().max(1) as f64
        );
    }
    s
}

fn skills_metrics(rep: &crate::skills::SkillTrainReport) -> String {
    let mut s = String::from("step,reconstruction,embedding_kl,prior_kl,total\n");
    for (i, l) in rep.losses.iter().enumerate() {
        let _ = writeln!(s, "{i},{:.6},{:.6},{:.6},{:.6}", l.reconstruction, l.embedding_kl, l.prior_kl, l.total);
    }
    let _ = writeln!(s, "# val_mse {:.6} -> {:.6}", rep.initial_val_mse, rep.final_val_mse);
    let _ = writeln!(s, "# val_prior_kl {:.6} -> {:.6}", rep.initial_val_prior_kl, rep.final_val_prior_kl);
    s
}

fn guidance_metrics(rep: &crate::guidance::GuidanceReport) -> String {
    let mut s = String::from("step,posterior_kl,discriminator_bce\n");
    let n = rep.posterior_losses.len().max(rep.disc_losses.len());
    for i in 0..n {
        let p = rep.posterior_losses.get(i).map_or(String::new(), |v| format!("{v:.6}"));
        let d = rep.disc_losses.get(i).map_or(String::new(), |v| format!("{v:.6}"));
        let _ = writeln!(s, "{i},{p},{d}");
    }
    s
}

pub fn load_skills(path: &Path) -> Result<SkillModel<f32>> {
    SkillModel::load(&Checkpoint::load(path)?)
}

pub fn load_guidance(path: &Path) -> Result<Guidance> {
    Guidance::load(&Checkpoint::load(path)?)
}

pub fn save_skills(model: &SkillModel<f32>, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new();
    model.save(&mut ck);
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    ck.save(path)?;
    Ok(())
}

pub fn save_guidance(g: &Guidance, path: &Path) -> Result<()> {
    let mut ck = Checkpoint::new();
    g.save(&mut ck);
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    ck.save(path)?;
    Ok(())
}

/// Relative locations of the pipeline's artifacts.
pub mod layout {
    pub const TASK_AGNOSTIC: &str = "data/task_agnostic.skld";
    pub const DEMOS: &str = "data/demos.skld";
    pub const DATA_METRICS: &str = "data/metrics.csv";
    pub const SKILLS: &str = "skills/skills.ckpt";
    pub const SKILLS_METRICS: &str = "skills/metrics.csv";
    pub const GUIDANCE: &str = "guidance/guidance.ckpt";
    pub const GUIDANCE_METRICS: &str = "guidance/metrics.csv";

    pub fn run_dir(mode: &str, seed: u64) -> String {
        format!("rl/{mode}/seed{seed}")
    }
}

/// Run (or resume) datagen → skills → guidance → RL → aggregation.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PipelineReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let canonical = cfg.canonical();
    let manifest_path = out_dir.join("manifest.toml");
    let mut manifest = Manifest::load(&manifest_path)?.unwrap_or_default();
    manifest.version = CONFIG_VERSION;
    manifest.package_version = env!("CARGO_PKG_VERSION").to_string();
    manifest.config_hash = sha256_hex(canonical.as_bytes());
    manifest.master_seed = cfg.master_seed;
    manifest.seeds = {
        let mut s: Vec<u64> = cfg.run_list().into_iter().map(|(_, s)| s).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let mut st = Stages { dir: out_dir, manifest, report: PipelineReport { out_dir: out_dir.to_path_buf(), ..Default::default() } };

    let layout_text = std::fs::read_to_string(cfg.layout_path())?;
    let maze = load_maze(&layout_text, cfg.maze.params()).map_err(|e| e.in_stage("maze"))?;
    let version = env!("CARGO_PKG_VERSION");
    let seed_s = cfg.master_seed.to_string();
    let p = |rel: &str| out_dir.join(rel);

    let data_key = key_of(&[version, &seed_s, &layout_text, &toml_of(&cfg.maze), &toml_of(&cfg.datagen)]);
    st.run(
        "datagen",
        &data_key,
        &[layout::TASK_AGNOSTIC.into(), layout::DEMOS.into(), layout::DATA_METRICS.into()],
        || {
            let d = &cfg.datagen;
            let gen = DataGenConfig { noise_sigma: d.noise_sigma, drop_failures: d.drop_failures };
            let ta = generate_task_agnostic(&maze, d.n_traj, gen, rng::child_seed(cfg.master_seed, "stage/datagen", 0))?;
            let demos = generate_demos(
                &maze,
                demo_start(cfg, &maze),
                maze.goal_cell,
                d.demos,
                d.demo_jitter,
                d.demo_noise_sigma,
                rng::child_seed(cfg.master_seed, "stage/demos", 0),
            )?;
            std::fs::create_dir_all(p("data"))?;
            ta.save(&p(layout::TASK_AGNOSTIC))?;
            demos.save(&p(layout::DEMOS))?;
            write_file(&p(layout::DATA_METRICS), &dataset_metrics(&[("task_agnostic", &ta), ("demos", &demos)]))
        },
    )?;

    let skills_key = key_of(&[&data_key, &toml_of(&cfg.skill_model)]);
    st.run("skills", &skills_key, &[layout::SKILLS.into(), layout::SKILLS_METRICS.into()], || {
        let ta = Dataset::load(&p(layout::TASK_AGNOSTIC))?;
        let (model, rep) = train_skill_model(&cfg.skill_model, &ta, rng::child_seed(cfg.master_seed, "stage/skills", 0))?;
        save_skills(&model, &p(layout::SKILLS))?;
        write_file(&p(layout::SKILLS_METRICS), &skills_metrics(&rep))
    })?;

    let guidance_key = key_of(&[&skills_key, &toml_of(&cfg.guidance)]);
    st.run("guidance", &guidance_key, &[layout::GUIDANCE.into(), layout::GUIDANCE_METRICS.into()], || {
        let ta = Dataset::load(&p(layout::TASK_AGNOSTIC))?;
        let demos = Dataset::load(&p(layout::DEMOS))?;
        let skills = load_skills(&p(layout::SKILLS))?;
        let (g, rep) = train_guidance(&skills, &ta, &demos, &cfg.guidance, rng::child_seed(cfg.master_seed, "stage/guidance", 0))?;
        save_guidance(&g, &p(layout::GUIDANCE))?;
        write_file(&p(layout::GUIDANCE_METRICS), &guidance_metrics(&rep))
    })?;

    let mut per_mode: BTreeMap<Mode, Vec<(u64, String)>> = BTreeMap::new();
    for (mode, seed) in cfg.run_list() {
        let rl_cfg = cfg.rl_config(mode);
        let dir = layout::run_dir(mode.name(), seed);
        let metrics_rel = format!("{dir}/metrics.csv");
        let key = key_of(&[&guidance_key, &toml_of(&rl_cfg), &seed.to_string()]);
        let name = format!("rl/{}/seed{seed}", mode.name());
        st.run(&name, &key, &[metrics_rel.clone(), format!("{dir}/policy.ckpt")], || {
            run_rl_stage(cfg, &rl_cfg, &maze, out_dir, &p(&dir), seed)
        })?;
        per_mode.entry(mode).or_default().push((seed, metrics_rel));
    }

    if !per_mode.is_empty() {
        let agg_outputs: Vec<String> = per_mode
            .keys()
            .map(|m| format!("aggregate/{}.csv", m.name()))
            .chain(["aggregate/curves.svg".to_string(), "aggregate/curves.csv".to_string()])
            .collect();
        let agg_key = key_of(
            &per_mode
                .values()
                .flatten()
                .map(|(_, rel)| std::fs::read(p(rel)).map(|b| sha256_hex(&b)).unwrap_or_default())
                .collect::<Vec<_>>()
                .iter()
                .map(String::as_str)
                .collect::<Vec<_>>(),
        );
        st.run("aggregate", &agg_key, &agg_outputs, || {
            let mut curves = Vec::new();
            for (mode, runs) in &per_mode {
                let logs = runs.iter().map(|(_, rel)| MetricsTable::load(&p(rel))).collect::<Result<Vec<_>>>()?;
                let agg = aggregate_seeds(&logs)?;
                write_file(&p(&format!("aggregate/{}.csv", mode.name())), &agg.to_csv())?;
                curves.push((mode.name().to_string(), agg));
            }
            let (svg, csv) = render::learning_curves(&curves, "success_rate");
            write_file(&p("aggregate/curves.svg"), &svg)?;
            write_file(&p("aggregate/curves.csv"), &csv)
        })?;
    }
    Ok(st.report)
}

fn run_rl_stage(cfg: &ExperimentConfig, rl_cfg: &RlConfig, maze: &MazeSpec, root: &Path, dir: &Path, seed: u64) -> Result<()> {
    let mode = rl_cfg.mode;
    std::fs::create_dir_all(dir)?;
    let skills = if mode.is_flat() { None } else { Some(load_skills(&root.join(layout::SKILLS))?) };
    let guidance = if mode.is_flat() { None } else { Some(load_guidance(&root.join(layout::GUIDANCE))?) };
    let demos = Some(Dataset::load(&root.join(layout::DEMOS))?);
    let inputs = RlInputs {
        maze,
        skills: skills.as_ref(),
        guidance: guidance.as_ref(),
        demos: demos.as_ref(),
        guidance_cfg: cfg.guidance.clone(),
    };
    let out = train_rl_to_dir(rl_cfg, &inputs, seed, dir)?;
    log::info!(
        "{} seed {seed}: final success {:.2}",
        mode.name(),
        out.last().map_or(0.0, |r| r.success_rate)
    );
    Ok(())
}

/// Train and write `metrics.csv` plus the latest `policy.ckpt` (refreshed
/// at every evaluation) into `dir`.
pub fn train_rl_to_dir(rl_cfg: &RlConfig, inputs: &RlInputs, seed: u64, dir: &Path) -> Result<Vec<agent::MetricsRow>> {
    std::fs::create_dir_all(dir)?;
    let ckpt_path = dir.join("policy.ckpt");
    let mut save = |a: &agent::Agent, _: &agent::MetricsRow| -> Result<()> {
        let mut ck = Checkpoint::new();
        a.save_policy(&mut ck);
        ck.save(&ckpt_path)?;
        Ok(())
    };
    let out = agent::train_with(rl_cfg, inputs, seed, Some(dir), &mut save)?;
    write_file(&dir.join("metrics.csv"), &metrics_csv(&out.metrics))?;
    Ok(out.metrics)
}

/// A numeric table whose first column is `env_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or(Error::EmptyInput)?;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        if columns.first().map(String::as_str) != Some("env_steps") {
            return Err(Error::DatasetFormat("metrics table must start with env_steps".into()));
        }
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let row: Vec<f64> = l
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::DatasetFormat(format!("row {}: {e}", i + 1)))?;
            if row.len() != columns.len() {
                return Err(Error::DatasetFormat(format!("row {} has {} fields, expected {}", i + 1, row.len(), columns.len())));
            }
            if let Some(prev) = rows.last().map(|r: &Vec<f64>| r[0]) {
                if row[0] <= prev {
                    return Err(Error::DatasetFormat("env_steps must be strictly increasing".into()));
                }
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn from_rows(rows: &[agent::MetricsRow]) -> Self {
        Self::parse(&metrics_csv(rows)).expect("generated metrics parse")
    }

    pub fn steps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Linear interpolation of column `j` at `x`, clamped at both ends.
    pub fn interpolate(&self, j: usize, x: f64) -> f64 {
        let rows = &self.rows;
        if x <= rows[0][0] {
            return rows[0][j];
        }
        for w in rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if x <= b[0] {
                let t = (x - a[0]) / (b[0] - a[0]);
                return a[j] + t * (b[j] - a[j]);
            }
        }
        rows[rows.len() - 1][j]
    }
}

/// Per-column mean and population standard deviation over seeds on a
/// common step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub columns: Vec<String>,
    pub steps: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub n_runs: usize,
}

impl Aggregate {
    pub fn column(&self, name: &str) -> Option<(&[f64], &[f64])> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some((&self.mean[j], &self.std[j]))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("env_steps");
        for c in &self.columns {
            let _ = write!(s, ",{c}_mean,{c}_std");
        }
        s.push('\n');
        for (i, x) in self.steps.iter().enumerate() {
            let _ = write!(s, "{x}");
            for j in 0..self.columns.len() {
                let _ = write!(s, ",{:.6},{:.6}", self.mean[j][i], self.std[j][i]);
            }
            s.push('\n');
        }
        s
    }
}

/// Interpolate every log onto the union of their step grids (restricted to
/// the range all logs cover) and average.
pub fn aggregate_seeds(logs: &[MetricsTable]) -> Result<Aggregate> {
    let first = logs.first().ok_or(Error::EmptyInput)?;
    if logs.iter().any(|l| l.rows.is_empty()) {
        return Err(Error::EmptyInput);
    }
    if logs.iter().any(|l| l.columns != first.columns) {
        return Err(Error::DatasetFormat("metrics logs have different columns".into()));
    }
    let lo = logs.iter().map(|l| l.rows[0][0]).fold(f64::NEG_INFINITY, f64::max);
    let hi = logs.iter().map(|l| l.rows[l.rows.len() - 1][0]).fold(f64::INFINITY, f64::min);
    let mut steps: Vec<f64> = logs.iter().flat_map(|l| l.steps()).filter(|&x| x >= lo && x <= hi).collect();
    steps.sort_by(f64::total_cmp);
    steps.dedup();
    if steps.is_empty() {
        steps.push(hi);
    }
    let columns: Vec<String> = first.columns[1..].to_vec();
    let n = logs.len() as f64;
    let mut mean = vec![Vec::with_capacity(steps.len()); columns.len()];
    let mut std = vec![Vec::with_capacity(steps.len()); columns.len()];
    for (j, (m, s)) in mean.iter_mut().zip(std.iter_mut()).enumerate() {
        for &x in &steps {
            let vals: Vec<f64> = logs.iter().map(|l| l.interpolate(j + 1, x)).collect();
            let mu = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            m.push(mu);
            s.push(var.sqrt());
        }
    }
    Ok(Aggregate { columns, steps, mean, std, n_runs: logs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(points: &[(f64, f64)]) -> MetricsTable {
        MetricsTable { columns: vec!["env_steps".into(), "v".into()], rows: points.iter().map(|&(x, y)| vec![x, y]).collect() }
    }

    #[test]
    fn single_log_has_zero_std() {
        let a = aggregate_seeds(&[table(&[(0.0, 1.0), (10.0, 3.0)])]).unwrap();
        assert_eq!(a.std[0], vec![0.0, 0.0]);
        assert_eq!(a.mean[0], vec![1.0, 3.0]);
    }

    #[test]
    fn population_std_of_two_constants() {
        let a = aggregate_seeds(&[table(&[(0.0, 0.0), (5.0, 0.0)]), table(&[(0.0, 1.0), (5.0, 1.0)])]).unwrap();
        assert!(a.mean[0].iter().all(|&m| m == 0.5));
        assert!(a.std[0].iter().all(|&s| s == 0.5));
    }

    #[test]
    fn interpolates_onto_common_grid() {
        let t = table(&[(0.0, 0.0), (100.0, 10.0)]);
        assert_eq!(t.interpolate(1, 50.0), 5.0);
        let a = aggregate_seeds(&[t, table(&[(0.0, 0.0), (50.0, 0.0), (100.0, 0.0)])]).unwrap();
        assert_eq!(a.steps, vec![0.0, 50.0, 100.0]);
        assert_eq!(a.mean[0], vec![0.0, 2.5, 5.0]);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(aggregate_seeds(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn metrics_table_parsing() {
        let t = MetricsTable::parse("env_steps,a\n0,1.5\n10,2\n").unwrap();
        assert_eq!(t.column("a").unwrap(), vec![1.5, 2.0]);
        assert!(MetricsTable::parse("env_steps,a\n10,1\n5,2\n").is_err());
        assert!(MetricsTable::parse("x,a\n0,1\n").is_err());
    }
}
