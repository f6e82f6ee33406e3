use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use skild_core::agent::{Mode, RlConfig, RlInputs};
use skild_core::data::{generate_demos, generate_task_agnostic, DataGenConfig, Dataset};
use skild_core::guidance::{train_guidance, GuidanceConfig};
use skild_core::harness::{self, aggregate_seeds, ExperimentConfig, MetricsTable};
use skild_core::maze::{load_maze, Cell, MazeParams, MazeSpec};
use skild_core::nets::Net;
use skild_core::skills::{train_skill_model, SkillModelConfig};
use skild_core::{render, rng};

#[derive(Parser)]
#[command(name = "skild", version, about = "Skill-based RL with learned skill priors, posteriors and demonstration support")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task-agnostic dataset or target-task demonstrations.
    Datagen(DatagenArgs),
    /// Train the skill encoder, low-level policy and skill prior.
    PretrainSkills(PretrainSkillsArgs),
    /// Train the skill posterior and the demonstration discriminator.
    PretrainGuidance(PretrainGuidanceArgs),
    /// Run downstream RL on the target task.
    Train(TrainArgs),
    /// Render support heatmaps and prior/posterior rollout maps.
    Render(RenderArgs),
    /// Average metrics logs across seeds.
    Aggregate(AggregateArgs),
    /// Run the full pipeline from an experiment config.
    Run(RunArgs),
}

fn parse_cell(s: &str) -> Result<Cell, String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected R,C, got `{s}`"))?;
    let r = r.trim().parse().map_err(|e| format!("row: {e}"))?;
    let c = c.trim().parse().map_err(|e| format!("col: {e}"))?;
    Ok(Cell::new(r, c))
}

#[derive(Args)]
struct MazeArgs {
    #[arg(long)]
    maze: PathBuf,
    #[arg(long, default_value_t = MazeParams::default().goal_radius)]
    goal_radius: f64,
    #[arg(long, default_value_t = MazeParams::default().dt)]
    dt: f64,
    #[arg(long, default_value_t = MazeParams::default().max_episode_steps)]
    max_episode_steps: u32,
}

impl MazeArgs {
    fn load(&self) -> Result<MazeSpec> {
        let text = std::fs::read_to_string(&self.maze).with_context(|| format!("reading {}", self.maze.display()))?;
        let params = MazeParams { goal_radius: self.goal_radius, dt: self.dt, max_episode_steps: self.max_episode_steps };
        Ok(load_maze(&text, params)?)
    }
}

#[derive(Args)]
struct DatagenArgs {
    #[command(flatten)]
    maze: MazeArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    demo: bool,
    #[arg(long, value_parser = parse_cell)]
    start: Option<Cell>,
    #[arg(long, value_parser = parse_cell)]
    goal: Option<Cell>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 0.5)]
    jitter: f64,
    #[arg(long)]
    drop_failures: bool,
}

#[derive(Args)]
struct PretrainSkillsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    beta: f64,
    #[arg(long, default_value_t = SkillModelConfig::default().train_steps)]
    steps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    open_loop: bool,
}

#[derive(Args)]
struct PretrainGuidanceArgs {
    #[arg(long)]
    skills: PathBuf,
    #[arg(long)]
    demos: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = |s: &str| Mode::parse(s).map_err(|e| e.to_string()))]
    mode: Mode,
    #[command(flatten)]
    maze: MazeArgs,
    #[arg(long)]
    skills: Option<PathBuf>,
    #[arg(long)]
    guidance: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with RL settings (same keys as the `[rl]` config section).
    #[arg(long)]
    rl_config: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    maze: MazeArgs,
    #[arg(long)]
    skills: PathBuf,
    #[arg(long)]
    guidance: PathBuf,
    /// Policy checkpoint for the divergence maps; the posterior when absent.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    density: usize,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    /// `NAME=LOG1,LOG2,...` per method.
    #[arg(long = "method", required = true)]
    methods: Vec<String>,
    #[arg(long, default_value = "success_rate")]
    column: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_path(p: &Path) -> PathBuf {
    harness::resolve_output(p)
}

fn datagen(a: DatagenArgs) -> Result<()> {
    let maze = a.maze.load()?;
    let out = out_path(&a.out);
    if let Some(d) = out.parent() {
        std::fs::create_dir_all(d)?;
    }
    let ds = if a.demo {
        let start = a.start.unwrap_or(maze.start_cells[0]);
        let goal = a.goal.unwrap_or(maze.goal_cell);
        generate_demos(&maze, start, goal, a.k, a.jitter, a.noise, a.seed)?
    } else {
        generate_task_agnostic(&maze, a.n, DataGenConfig { noise_sigma: a.noise, drop_failures: a.drop_failures }, a.seed)?
    };
    ds.save(&out)?;
    println!("wrote {} trajectories ({} transitions) to {}", ds.trajectories.len(), ds.num_transitions(), out.display());
    Ok(())
}

fn pretrain_skills(a: PretrainSkillsArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let cfg = SkillModelConfig { beta: a.beta, train_steps: a.steps, state_conditioned_decoder: !a.open_loop, ..Default::default() };
    let (model, rep) = train_skill_model(&cfg, &ds, a.seed)?;
    let out = out_path(&a.out);
    harness::save_skills(&model, &out)?;
    println!("validation reconstruction MSE {:.5} -> {:.5}; wrote {}", rep.initial_val_mse, rep.final_val_mse, out.display());
    Ok(())
}

fn pretrain_guidance(a: PretrainGuidanceArgs) -> Result<()> {
    let skills = harness::load_skills(&a.skills)?;
    let demos = Dataset::load(&a.demos)?;
    let ta = Dataset::load(&a.data)?;
    let (g, rep) = train_guidance(&skills, &ta, &demos, &GuidanceConfig::default(), a.seed)?;
    let out = out_path(&a.out);
    harness::save_guidance(&g, &out)?;
    println!(
        "posterior KL {:.4}, discriminator BCE {:.4}; wrote {}",
        rep.posterior_losses.last().copied().unwrap_or(f64::NAN),
        rep.disc_losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let maze = a.maze.load()?;
    let mut cfg = match &a.rl_config {
        Some(p) => toml::from_str::<RlConfig>(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => RlConfig::default(),
    };
    cfg.mode = a.mode;
    cfg.total_env_steps = a.steps;
    let skills = a.skills.as_deref().map(harness::load_skills).transpose()?;
    let guidance = a.guidance.as_deref().map(harness::load_guidance).transpose()?;
    let demos = a.demos.as_deref().map(Dataset::load).transpose()?;
    if let Some(d) = &a.data {
        Dataset::load(d)?.validate()?;
    }
    let inputs = RlInputs { maze: &maze, skills: skills.as_ref(), guidance: guidance.as_ref(), demos: demos.as_ref(), guidance_cfg: GuidanceConfig::default() };
    let out = out_path(&a.out);
    let rows = harness::train_rl_to_dir(&cfg, &inputs, a.seed, &out)?;
    let last = rows.last().copied().unwrap_or_default();
    println!("{} after {} env steps: success {:.2}, return {:.2}", a.mode.name(), last.env_steps, last.success_rate, last.episode_return);
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let maze = a.maze.load()?;
    let skills = harness::load_skills(&a.skills)?;
    let guidance = harness::load_guidance(&a.guidance)?;
    let policy = match &a.policy {
        Some(p) => Net::load(&skild_nn::Checkpoint::load(p)?, "policy")?,
        None => guidance.posterior.folded()?,
    };
    let out = out_path(&a.out);
    let maps = render::support_maps(&maze, &guidance, &skills.prior, &policy, a.density)?;
    render::write_support_maps(&out, &maze, &maps)?;
    let exec = skills.executor()?;
    let demo_cells = a.demos.as_deref().map(Dataset::load).transpose()?.map(|d| render::demo_cells(&d, &maze));
    for (name, net) in [("prior", &skills.prior), ("posterior", &guidance.posterior)] {
        let mut r = rng::stream(a.seed, "render/rollouts", 0);
        let map = render::rollout_map(&maze, net, &exec, 2.0, a.episodes, &mut r)?;
        std::fs::write(out.join(format!("rollouts_{name}.svg")), render::rollout_svg(&maze, &map, name))?;
        std::fs::write(out.join(format!("rollouts_{name}.csv")), map.to_csv())?;
        let corridor = demo_cells.as_ref().map_or(String::new(), |c| format!(", demo-corridor coverage {:.3}, time share {:.3}", map.coverage_of(c), map.rate_in(c)));
        println!(
            "{name}: goal-hit fraction {:.2}, {} cells visited{corridor}",
            map.goal_hit_fraction(),
            map.visited_cells().len()
        );
    }
    println!("wrote maps to {}", out.display());
    Ok(())
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    let out = out_path(&a.out);
    std::fs::create_dir_all(&out)?;
    let mut curves = Vec::new();
    for spec in &a.methods {
        let Some((name, logs)) = spec.split_once('=') else { bail!("expected NAME=LOG1,LOG2,..., got `{spec}`") };
        let tables = logs.split(',').map(|p| MetricsTable::load(Path::new(p))).collect::<skild_core::Result<Vec<_>>>()?;
        let agg = aggregate_seeds(&tables)?;
        std::fs::write(out.join(format!("{name}.csv")), agg.to_csv())?;
        curves.push((name.to_string(), agg));
    }
    let (svg, csv) = render::learning_curves(&curves, &a.column);
    std::fs::write(out.join("curves.svg"), svg)?;
    std::fs::write(out.join("curves.csv"), csv)?;
    println!("wrote aggregates for {} methods to {}", curves.len(), out.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let fallback = a.out.clone().or_else(|| cfg.out_dir.as_ref().map(|d| cfg.base_dir.join(d))).unwrap_or_else(|| PathBuf::from("skild-out"));
    let root = harness::output_root(&fallback);
    let rep = harness::run_pipeline(&cfg, &root)?;
    println!("{} stages run, {} up to date; artifacts in {}", rep.executed.len(), rep.skipped.len(), root.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Datagen(a) => datagen(a),
        Command::PretrainSkills(a) => pretrain_skills(a),
        Command::PretrainGuidance(a) => pretrain_guidance(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render_cmd(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Run(a) => run(a),
    }
}
