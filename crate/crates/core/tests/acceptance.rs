//! End-to-end acceptance report on the reference setup.
//!
//! Uses the reference pipeline artifacts under `runs/reference` (or
//! `SKILD_OUT_DIR`), producing any that are missing first. A complete
//! reference run takes a few hours on one core; once it exists this target
//! finishes in minutes.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use common::{bfs_len, fixture, free_cells, random_grid, small_rl_cfg, to_maze, Fixture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skild_core::agent::{self, Mode, PolicyBatch, PolicyInit, PolicyWeights, Regularizer, RlConfig, RlInputs, RlOutcome};
use skild_core::data::{generate_demos, generate_task_agnostic, plan_path, DataGenConfig, Dataset};
use skild_core::guidance::{auc, bce_loss, posterior_loss, train_posterior};
use skild_core::harness::{
    layout, load_guidance, load_skills, output_root, run_pipeline, sha256_hex, ExperimentConfig, Manifest, MetricsTable,
    RunGroup,
};
use skild_core::maze::{load_maze, Cell, MazeSpec};
use skild_core::nets::{batch_from_rows, Net};
use skild_core::render::{demo_cells, rollout_map};
use skild_core::rng;
use skild_core::skills::{normal_matrix, train_skill_model, EncoderKind, SkillModel, SkillModelConfig, WindowBatch};
use skild_nn::{grad_check, DiagGaussian, GaussianBatch, HeadKind, Matrix, NetSpec, ParamStore};

const GRAD_TOL: f64 = 1e-4;
const MC_SAMPLES: usize = 1_000_000;
const KL_PAIRS: usize = 100;
const KL_REL_TOL: f64 = 0.01;
const MSE_RATIO: f64 = 0.2;
const AUC_MIN: f64 = 0.95;
const SUCCESS_LEVEL: f64 = 0.5;
const SAC_FLAT_MAX: f64 = 0.1;
/// Number of trailing evaluations averaged into a run's final success rate.
const FINAL_EVALS: usize = 5;
const ROLLOUT_EPISODES: usize = 100;

type Check = Result<String, String>;

fn pass_if(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// Reference artifacts

struct Reference {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Reference {
    fn load() -> Self {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
        let cfg = ExperimentConfig::load(&path).expect("reference config");
        let fallback = cfg.base_dir.join(cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs/reference")));
        let out = output_root(&fallback);
        let rep = run_pipeline(&cfg, &out).expect("reference pipeline");
        if !rep.executed.is_empty() {
            println!("reference pipeline: ran {:?}", rep.executed);
        }
        Self { cfg, out }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn maze(&self) -> MazeSpec {
        let text = std::fs::read_to_string(self.cfg.layout_path()).unwrap();
        load_maze(&text, self.cfg.maze.params()).unwrap()
    }

    fn runs(&self, mode: Mode) -> Vec<MetricsTable> {
        self.cfg
            .run_list()
            .into_iter()
            .filter(|(m, _)| *m == mode)
            .map(|(m, s)| MetricsTable::load(&self.path(&format!("{}/metrics.csv", layout::run_dir(m.name(), s)))).unwrap())
            .collect()
    }
}

fn final_success(t: &MetricsTable) -> f64 {
    let s = t.column("success_rate").unwrap();
    let tail = &s[s.len().saturating_sub(FINAL_EVALS)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn steps_to(t: &MetricsTable, level: f64) -> f64 {
    let s = t.column("success_rate").unwrap();
    t.steps().into_iter().zip(s).find(|(_, v)| *v >= level).map_or(f64::INFINITY, |(x, _)| x)
}

fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn summarize(r: &Reference, mode: Mode) -> (f64, f64, String) {
    let runs = r.runs(mode);
    assert!(!runs.is_empty(), "no {} runs in the reference config", mode.name());
    let finals: Vec<f64> = runs.iter().map(final_success).collect();
    let steps: Vec<f64> = runs.iter().map(|t| steps_to(t, SUCCESS_LEVEL)).collect();
    let text = format!("{} finals {:?} steps-to-0.5 {:?}", mode.name(), finals, steps);
    (median(finals), median(steps), text)
}

// ---------------------------------------------------------------------------
// 1. Numerical oracles

fn grad_error<M>(model: &mut M, store_of: impl Fn(&mut M) -> &mut ParamStore<f64>, mut loss: impl FnMut(&mut M, bool) -> f64) -> f64 {
    let mut store = std::mem::take(store_of(model));
    let report = grad_check(&mut store, 1e-5, 30, |s, with_grad| {
        std::mem::swap(store_of(model), s);
        store_of(model).zero_grad();
        let l = loss(model, with_grad);
        std::mem::swap(store_of(model), s);
        l
    });
    *store_of(model) = store;
    report.max_rel_error
}

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

fn random_gaussians(n: usize, d: usize, rng: &mut ChaCha8Rng) -> GaussianBatch<f64> {
    GaussianBatch::from_parts(random_matrix(n, d, -1.0, 1.0, rng), random_matrix(n, d, -1.0, 0.5, rng))
}

fn gradient_suite() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();

    // Skill model: encoder, decoder and prior for each architecture.
    for (encoder, closed) in [(EncoderKind::Lstm, true), (EncoderKind::Lstm, false), (EncoderKind::Flat, true)] {
        let cfg = SkillModelConfig {
            horizon: 4,
            z_dim: 2,
            encoder,
            encoder_hidden: 8,
            decoder_hidden: vec![8, 8],
            prior_hidden: vec![8, 8],
            state_conditioned_decoder: closed,
            beta: 0.1,
            ..SkillModelConfig::default()
        };
        let mut model = SkillModel::<f64>::new(cfg, 4, 2, &mut rng).unwrap();
        let windows: Vec<_> = (0..6)
            .map(|_| skild_core::data::SkillWindow {
                states: (0..16).map(|_| rng.random_range(0.0..1.0)).collect(),
                actions: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let batch = WindowBatch::new(&windows, 4, 2);
        let eps = normal_matrix(6, 2, &mut rng);
        let tag = format!("skills/{encoder:?}/{}", if closed { "closed" } else { "open" });
        let beta = model.cfg.beta;
        let e = grad_error(&mut model, |m| &mut m.encoder_store, |m, g| {
            let l = m.loss(&batch, &eps, g, false).unwrap();
            l.reconstruction + beta * l.embedding_kl
        });
        out.push((format!("{tag}/encoder"), e));
        let e = grad_error(&mut model, |m| &mut m.decoder.store, |m, g| m.loss(&batch, &eps, g, false).unwrap().total);
        out.push((format!("{tag}/decoder"), e));
        let e = grad_error(&mut model, |m| &mut m.prior.store, |m, g| m.loss(&batch, &eps, g, false).unwrap().prior_kl);
        out.push((format!("{tag}/prior"), e));
    }

    // Skill posterior and discriminator.
    let mut post = Net::<f64>::new(NetSpec::new(4, vec![8; 5], 3, HeadKind::Gaussian), "posterior", &mut rng).unwrap();
    let s0 = random_matrix(10, 4, 0.0, 1.0, &mut rng);
    let target = random_gaussians(10, 3, &mut rng);
    out.push(("posterior".into(), grad_error(&mut post, |n| &mut n.store, |n, g| posterior_loss(n, &s0, &target, g, false).unwrap())));
    let mut disc = Net::<f64>::new(NetSpec::new(4, vec![8; 3], 1, HeadKind::SigmoidScalar), "disc", &mut rng).unwrap();
    let x = random_matrix(12, 4, 0.0, 1.0, &mut rng);
    let labels: Vec<f64> = (0..12).map(|i| (i < 6) as u8 as f64).collect();
    out.push(("discriminator".into(), grad_error(&mut disc, |n| &mut n.store, |n, g| bce_loss(n, &x, &labels, g, false).unwrap())));

    // High-level policy under each regularizer, and the critic.
    let (n, d) = (5, 3);
    let critic_spec = NetSpec::new(4 + d, vec![8, 8], 1, HeadKind::Scalar);
    let mut critics =
        [Net::<f64>::new(critic_spec.clone(), "q1", &mut rng).unwrap(), Net::<f64>::new(critic_spec, "q2", &mut rng).unwrap()];
    for (reg, bc) in [(Regularizer::Gated, false), (Regularizer::Entropy, false), (Regularizer::Entropy, true)] {
        let mut policy = Net::<f64>::new(NetSpec::new(4, vec![8, 8], d, HeadKind::Gaussian), "policy", &mut rng).unwrap();
        let batch = PolicyBatch {
            obs: random_matrix(n, 4, 0.0, 1.0, &mut rng),
            eps: normal_matrix(n, d, &mut rng),
            prior: Some(random_gaussians(n, d, &mut rng)),
            posterior: Some(random_gaussians(n, d, &mut rng)),
            gate: (0..n).map(|_| rng.random_range(0.05..0.95)).collect(),
            bc_mean: bc.then(|| random_matrix(n, d, -1.0, 1.0, &mut rng)),
        };
        let w = PolicyWeights { alpha: 0.3, alpha_q: 0.7, regularizer: reg, squash_scale: 2.0, bc_weight: if bc { 0.5 } else { 0.0 } };
        let e = grad_error(&mut policy, |p| &mut p.store, |p, g| agent::policy_loss(p, &mut critics, &batch, &w, g).unwrap().loss);
        out.push((format!("policy/{reg:?}{}", if bc { "+bc" } else { "" }), e));
    }
    let x = random_matrix(n, 4 + d, -1.0, 1.0, &mut rng);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let e = grad_error(&mut critics[0], |c| &mut c.store, |c, g| agent::critic_loss(c, &x, &y, g).unwrap());
    out.push(("critic".into(), e));
    out
}

fn kl_monte_carlo_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..KL_PAIRS {
        let dim = rng.random_range(1..=4);
        let mut g = || {
            DiagGaussian::new(
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..dim).map(|_| rng.random_range(-0.7..0.7)).collect(),
            )
            .unwrap()
        };
        let (p, q) = (g(), g());
        let exact: f64 = p.kl(&q).unwrap();
        let mut acc = 0.0;
        for _ in 0..MC_SAMPLES {
            let (z, lp, _) = p.sample_reparam(&mut rng);
            acc += lp - q.log_prob(&z);
        }
        let mc = acc / MC_SAMPLES as f64;
        // Relative to the divergence, with a floor for near-identical pairs.
        worst = worst.max((mc - exact).abs() / exact.max(0.05));
    }
    worst
}

fn criterion_1() -> Check {
    let suite = gradient_suite();
    let (name, worst) = suite.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let kl = kl_monte_carlo_worst();
    pass_if(
        worst <= GRAD_TOL && kl <= KL_REL_TOL,
        format!("{} gradient checks, worst rel err {worst:.2e} ({name}); KL vs Monte Carlo worst rel err {kl:.4} over {KL_PAIRS} pairs", suite.len()),
    )
}

// ---------------------------------------------------------------------------
// 2. Stop-gradient contract

fn criterion_2(f: &Fixture) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SkillModelConfig { horizon: 4, z_dim: 2, encoder_hidden: 8, decoder_hidden: vec![8], prior_hidden: vec![8], ..SkillModelConfig::default() };
    let a = SkillModel::<f64>::new(cfg, 4, 2, &mut rng).unwrap();
    let windows = skild_core::data::WindowSampler::new(&f.task_agnostic, 4).unwrap().strided(&f.task_agnostic, 7);
    let batch = WindowBatch::<f64>::new(&windows[..8], 4, 2);
    let eps = normal_matrix(8, 2, &mut rng);

    // Prior term: perturbing only the prior leaves encoder gradients bitwise equal.
    let (mut a1, mut a2) = (a.clone(), a.clone());
    for e in a2.prior.store.entries_mut() {
        e.value.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
    }
    a1.loss(&batch, &eps, true, false).unwrap();
    a2.loss(&batch, &eps, true, false).unwrap();
    let bits = |m: &SkillModel<f64>| m.encoder_store.entries().iter().flat_map(|e| e.grad.iter().map(|g| g.to_bits())).collect::<Vec<_>>();
    let prior_ok = bits(&a1) == bits(&a2);

    // The full backward pass must give the encoder exactly the gradient of
    // the reconstruction and embedding terms.
    let mut vae = a.clone();
    let e_only = grad_error(&mut vae, |m| &mut m.encoder_store, |m, g| {
        let l = m.loss(&batch, &eps, g, false).unwrap();
        l.reconstruction + m.cfg.beta * l.embedding_kl
    });

    // Posterior term: fitting the posterior never touches the skill model.
    let before = f.skills.clone();
    let (_, _) = train_posterior(&f.skills, &f.demos, &f.guidance_cfg, 9).unwrap();
    let same = |x: &ParamStore<f32>, y: &ParamStore<f32>| {
        x.entries().iter().zip(y.entries()).all(|(p, q)| p.value.iter().zip(&q.value).all(|(u, v)| u.to_bits() == v.to_bits()))
            && x.entries().iter().all(|e| e.grad.iter().all(|&g| g == 0.0))
    };
    let post_ok = same(&before.encoder_store, &f.skills.encoder_store);
    pass_if(
        prior_ok && post_ok && e_only <= GRAD_TOL,
        format!("prior-term encoder grads bitwise unchanged: {prior_ok}; encoder grad equals VAE-only grad (rel err {e_only:.1e}); posterior fit leaves encoder untouched with zero grads: {post_ok}"),
    )
}

// ---------------------------------------------------------------------------
// 3. Planner vs breadth-first search

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut mazes, mut pairs, mut mismatches) = (0, 0, 0);
    while mazes < 100 {
        let Some((grid, maze)) = to_maze(random_grid(&mut rng), &mut rng) else { continue };
        mazes += 1;
        let free = free_cells(&grid);
        for _ in 0..10 {
            let a = free[rng.random_range(0..free.len())];
            let b = free[rng.random_range(0..free.len())];
            let Some(n) = bfs_len(&grid, a, b) else { continue };
            pairs += 1;
            match plan_path(&maze, Cell::new(a.0, a.1), Cell::new(b.0, b.1)) {
                Ok(p) if p.len() == n => {}
                _ => mismatches += 1,
            }
        }
    }
    pass_if(mismatches == 0, format!("{mazes} random 15x15 mazes, {pairs} connected pairs, {mismatches} length mismatches"))
}

// ---------------------------------------------------------------------------
// 4. Skill model reconstruction

fn val_mse_line(text: &str) -> (f64, f64) {
    let line = text.lines().find(|l| l.starts_with("# val_mse")).expect("val_mse line");
    let v: Vec<f64> = line.trim_start_matches("# val_mse").split("->").map(|s| s.trim().parse().unwrap()).collect();
    (v[0], v[1])
}

/// Open-loop counterpart of the reference skill model under the same budget,
/// cached next to the reference artifacts.
fn open_loop_mse(r: &Reference) -> (f64, f64) {
    let cfg = SkillModelConfig { state_conditioned_decoder: false, ..r.cfg.skill_model.clone() };
    let key = sha256_hex(format!("{}|{}", toml::to_string(&cfg).unwrap(), std::fs::read_to_string(r.path(layout::DATA_METRICS)).unwrap()).as_bytes());
    let cache = r.path("acceptance/open_loop_skills.txt");
    if let Ok(text) = std::fs::read_to_string(&cache) {
        if text.lines().next() == Some(key.as_str()) {
            return val_mse_line(&text);
        }
    }
    let ta = Dataset::load(&r.path(layout::TASK_AGNOSTIC)).unwrap();
    let (_, rep) = train_skill_model(&cfg, &ta, rng::child_seed(r.cfg.master_seed, "stage/skills", 0)).unwrap();
    std::fs::create_dir_all(cache.parent().unwrap()).unwrap();
    let text = format!("{key}\n# val_mse {:.6} -> {:.6}\n", rep.initial_val_mse, rep.final_val_mse);
    std::fs::write(&cache, &text).unwrap();
    (rep.initial_val_mse, rep.final_val_mse)
}

fn criterion_4(r: &Reference) -> Check {
    let (init, fin) = val_mse_line(&std::fs::read_to_string(r.path(layout::SKILLS_METRICS)).unwrap());
    let (open_init, open_fin) = open_loop_mse(r);
    let ratio = fin / init;
    pass_if(
        ratio <= MSE_RATIO && fin <= open_fin,
        format!(
            "closed-loop held-out MSE {init:.4} -> {fin:.4} (ratio {ratio:.3}, bound {MSE_RATIO}); open-loop {open_init:.4} -> {open_fin:.4} after {} steps",
            r.cfg.skill_model.train_steps
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Discriminator on held-out states

fn criterion_5(r: &Reference) -> Check {
    let maze = r.maze();
    let g = load_guidance(&r.path(layout::GUIDANCE)).unwrap();
    let d = &r.cfg.datagen;
    let start = r.cfg.maze.demo_start.map_or(maze.start_cells[0], |[a, b]| Cell::new(a, b));
    let seed = rng::child_seed(r.cfg.master_seed, "acceptance/held_out", 0);
    let demos = generate_demos(&maze, start, maze.goal_cell, d.demos, d.demo_jitter, d.demo_noise_sigma, seed).unwrap();
    let gen = DataGenConfig { noise_sigma: d.noise_sigma, drop_failures: d.drop_failures };
    let ta = generate_task_agnostic(&maze, 300, gen, seed ^ 1).unwrap();
    let score = |ds: &Dataset| g.discriminator.prob(&batch_from_rows(&ds.states().collect::<Vec<_>>())).unwrap();
    let (pos, neg) = (score(&demos), score(&ta));
    let a = auc(&pos, &neg);
    pass_if(a >= AUC_MIN, format!("held-out AUC {a:.4} ({} demo vs {} task-agnostic states)", pos.len(), neg.len()))
}

// ---------------------------------------------------------------------------
// 6. Mode algebra

fn fingerprint(o: &RlOutcome) -> (u64, Vec<u32>, u64, String) {
    let a = &o.agent;
    let mut bits: Vec<u32> = Vec::new();
    for s in [&a.policy.store, &a.critics[0].store, &a.critics[1].store, &a.targets[0].store, &a.targets[1].store] {
        bits.extend(s.entries().iter().flat_map(|e| e.value.iter().map(|v| v.to_bits())));
    }
    (a.updates, bits, a.alpha.to_bits() ^ a.alpha_q.to_bits().rotate_left(1), agent::metrics_csv(&o.metrics))
}

fn criterion_6(f: &Fixture) -> Check {
    let inputs = RlInputs { maze: &f.maze, skills: Some(&f.skills), guidance: Some(&f.guidance), demos: Some(&f.demos), guidance_cfg: f.guidance_cfg.clone() };
    let run = |mode: Mode, kappa: Option<f64>, gate: Option<f64>, init: Option<PolicyInit>| {
        let cfg = RlConfig { mode, kappa, gate_override: gate, policy_init: init, ..small_rl_cfg() };
        fingerprint(&agent::train(&cfg, &inputs, 5, None).unwrap())
    };
    let spirl = run(Mode::Spirl, None, None, None) == run(Mode::Skild, Some(0.0), Some(0.0), Some(PolicyInit::Prior));
    let imitation = run(Mode::Imitation, None, None, None) == run(Mode::Skild, Some(1.0), None, None);
    let no_gail = run(Mode::NoGail, None, None, None) == run(Mode::Skild, Some(0.0), None, None);
    pass_if(
        spirl && imitation && no_gail,
        format!("skild(D=0,k=0)==spirl: {spirl}; skild(k=1)==imitation: {imitation}; skild(k=0)==no_gail: {no_gail}"),
    )
}

// ---------------------------------------------------------------------------
// 7-9. Downstream runs

fn criterion_7(r: &Reference) -> Check {
    let (skild, skild_steps, a) = summarize(r, Mode::Skild);
    let (spirl, spirl_steps, b) = summarize(r, Mode::Spirl);
    let (flat, _, c) = summarize(r, Mode::SacFlat);
    let ok = skild >= spirl && skild >= flat && skild >= SUCCESS_LEVEL && flat <= SAC_FLAT_MAX && skild_steps.is_finite() && skild_steps <= spirl_steps;
    pass_if(
        ok,
        format!("median final success skild {skild:.2} spirl {spirl:.2} sac_flat {flat:.2}; median steps-to-0.5 skild {skild_steps} spirl {spirl_steps} [{a}; {b}; {c}]"),
    )
}

fn criterion_8(r: &Reference) -> Check {
    let (skild, skild_steps, _) = summarize(r, Mode::Skild);
    let (post, _, a) = summarize(r, Mode::PostOnly);
    let (_, gail_steps, b) = summarize(r, Mode::NoGail);
    pass_if(
        post <= skild && gail_steps >= skild_steps,
        format!("post_only {post:.2} <= skild {skild:.2}; no_gail steps-to-0.5 {gail_steps} >= skild {skild_steps} [{a}; {b}]"),
    )
}

fn criterion_9(r: &Reference) -> Check {
    let (imit, _, a) = summarize(r, Mode::Imitation);
    pass_if(imit >= SUCCESS_LEVEL, format!("imitation median final success {imit:.2} [{a}]"))
}

// ---------------------------------------------------------------------------
// 10. Exploration contrast

fn criterion_10(r: &Reference) -> Check {
    let maze = r.maze();
    let skills = load_skills(&r.path(layout::SKILLS)).unwrap();
    let g = load_guidance(&r.path(layout::GUIDANCE)).unwrap();
    let demos = Dataset::load(&r.path(layout::DEMOS)).unwrap();
    let cells = demo_cells(&demos, &maze);
    let exec = skills.executor().unwrap();
    let cover = |net: &Net<f32>| {
        let mut rr = rng::stream(r.cfg.master_seed, "acceptance/rollouts", 0);
        let map = rollout_map(&maze, net, &exec, r.cfg.rl.squash_scale as f32, ROLLOUT_EPISODES, &mut rr).unwrap();
        (map.coverage_of(&cells), map.rate_in(&cells))
    };
    let (prior_cov, prior_share) = cover(&skills.prior);
    let (post_cov, post_share) = cover(&g.posterior);
    pass_if(
        post_cov >= prior_cov,
        format!(
            "demo-corridor coverage per episode posterior {post_cov:.3} vs prior {prior_cov:.3} (ratio {:.2}); time share {post_share:.3} vs {prior_share:.3}",
            post_cov / prior_cov
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. Determinism

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_file() {
            std::fs::copy(e.path(), to.join(e.file_name())).unwrap();
        }
    }
}

fn criterion_11(r: &Reference) -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    copy_dir(&r.path("data"), &out.join("data"));
    copy_dir(&r.path("skills"), &out.join("skills"));
    let mut manifest = Manifest::load(&r.path("manifest.toml")).unwrap().unwrap();
    manifest.stages.retain(|k, _| k == "datagen" || k == "skills");
    manifest.save(&out.join("manifest.toml")).unwrap();
    std::fs::remove_file(out.join(layout::DATA_METRICS)).unwrap();

    let mut cfg = r.cfg.clone();
    cfg.rl.total_env_steps = 10_000;
    cfg.rl.log_every = 0;
    cfg.runs = vec![RunGroup { modes: vec![Mode::Skild], seeds: vec![0] }];
    let first = run_pipeline(&cfg, out).unwrap();
    let run_metrics = format!("{}/metrics.csv", layout::run_dir("skild", 0));
    let rl_first = std::fs::read(out.join(&run_metrics)).unwrap();
    std::fs::remove_dir_all(out.join("rl")).unwrap();
    run_pipeline(&cfg, out).unwrap();

    let same = |a: &Path, b: &Path| std::fs::read(a).unwrap() == std::fs::read(b).unwrap();
    let data = same(&out.join(layout::DATA_METRICS), &r.path(layout::DATA_METRICS));
    let demos = same(&out.join(layout::DEMOS), &r.path(layout::DEMOS));
    let guidance = same(&out.join(layout::GUIDANCE_METRICS), &r.path(layout::GUIDANCE_METRICS));
    let rl = rl_first == std::fs::read(out.join(&run_metrics)).unwrap();
    pass_if(
        data && demos && guidance && rl && first.executed.iter().any(|s| s == "guidance"),
        format!("reran {:?}: datagen metrics {data}, demos {demos}, guidance metrics {guidance}, short skild run {rl}", first.executed),
    )
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance_report() {
    let reference = Reference::load();
    let f = fixture();
    let criteria: Vec<(u8, &str, Box<dyn FnOnce() -> Check + '_>)> = vec![
        (1, "numerical oracles", Box::new(criterion_1)),
        (2, "stop-gradient contract", Box::new(|| criterion_2(&f))),
        (3, "planner matches BFS", Box::new(criterion_3)),
        (4, "skill reconstruction", Box::new(|| criterion_4(&reference))),
        (5, "discriminator AUC", Box::new(|| criterion_5(&reference))),
        (6, "mode algebra", Box::new(|| criterion_6(&f))),
        (7, "downstream ordering", Box::new(|| criterion_7(&reference))),
        (8, "ablation direction", Box::new(|| criterion_8(&reference))),
        (9, "imitation mode", Box::new(|| criterion_9(&reference))),
        (10, "exploration contrast", Box::new(|| criterion_10(&reference))),
        (11, "determinism", Box::new(|| criterion_11(&reference))),
    ];
    let mut failed = Vec::new();
    for (id, title, check) in criteria {
        let t0 = std::time::Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("criterion {id:>2} PASS {title}: {d} ({secs:.0}s)"),
            Err(d) => {
                println!("criterion {id:>2} FAIL {title}: {d} ({secs:.0}s)");
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
