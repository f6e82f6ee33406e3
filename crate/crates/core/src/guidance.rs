//! Task-specific guidance learned from demonstrations: the skill posterior
//! q(z | s) and the demonstration discriminator D(s).

use rand::Rng;
use serde::{Deserialize, Serialize};
use skild_nn::{kl_grad, kl_terms, Checkpoint, GaussianBatch, HeadKind, Matrix, Mode, NetSpec, Optimizer, Scalar};

use crate::data::{Dataset, WindowSampler};
use crate::nets::{batch_from_rows, Net};
use crate::skills::{SkillModel, WindowBatch};
use crate::{rng, Error, Result};

/// Discriminator outputs are clamped to `[DISC_EPS, 1 − DISC_EPS]`.
pub const DISC_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub posterior_steps: usize,
    pub posterior_lr: f64,
    pub posterior_batch: usize,
    /// Start the posterior from the skill prior's weights.
    pub posterior_init_from_prior: bool,
    pub disc_hidden: Vec<usize>,
    pub disc_batch_norm: bool,
    pub disc_steps: usize,
    pub disc_lr: f64,
    /// Total states per step, half demonstration and half task-agnostic.
    pub disc_batch: usize,
    pub label_smoothing: f64,
    pub finetune_steps: usize,
    pub log_every: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            posterior_steps: 3000,
            posterior_lr: 1e-3,
            posterior_batch: 128,
            posterior_init_from_prior: true,
            disc_hidden: vec![32; 3],
            disc_batch_norm: true,
            disc_steps: 3000,
            disc_lr: 1e-3,
            disc_batch: 256,
            label_smoothing: 0.0,
            finetune_steps: 50,
            log_every: 500,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("guidance: {m}")));
        if !(self.posterior_lr > 0.0) || !(self.disc_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.posterior_batch == 0 || self.disc_batch < 2 {
            return bad("batch sizes too small");
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 0.5)");
        }
        Ok(())
    }
}

pub fn clamp_prob(d: f64) -> f64 {
    d.clamp(DISC_EPS, 1.0 - DISC_EPS)
}

/// `log D − log(1 − D)` with `D` clamped.
pub fn discriminator_reward(d: f64) -> f64 {
    let d = clamp_prob(d);
    d.ln() - (1.0 - d).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy of logits; accumulates parameter gradients when
/// `backward`.
pub fn bce_loss<T: Scalar>(net: &mut Net<T>, x: &Matrix<T>, labels: &[f64], backward: bool, update_stats: bool) -> Result<f64> {
    let (logits, tape) = net.forward(x, Mode::Train)?;
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut d = Matrix::zeros(logits.rows(), 1);
    for (i, &y) in labels.iter().enumerate() {
        let l = logits.get(i, 0).to_f64().unwrap_or(f64::NAN);
        loss += y * softplus(-l) + (1.0 - y) * softplus(l);
        d.set(i, 0, T::from_f64_lossy((sigmoid(l) - y) / n));
    }
    if backward {
        net.backward(&tape, &d, true);
    }
    if update_stats {
        net.update_running_stats(&tape);
    }
    Ok(loss / n)
}

/// Mean `KL(target ‖ q(s₀))`; gradients reach only the posterior network.
pub fn posterior_loss<T: Scalar>(
    net: &mut Net<T>,
    s0: &Matrix<T>,
    target: &GaussianBatch<T>,
    backward: bool,
    update_stats: bool,
) -> Result<f64> {
    let (q, tape) = net.gaussian(s0, Mode::Train)?;
    let n = q.rows();
    let inv: T = T::from_f64_lossy(1.0 / n as f64);
    let mut loss = T::zero();
    let (mut dm, mut dl) = (Matrix::zeros(n, q.dim()), Matrix::zeros(n, q.dim()));
    for r in 0..n {
        let (tm, tl) = (target.mean.row(r), target.log_std.row(r));
        loss += kl_terms(tm, tl, q.mean.row(r), q.log_std.row(r));
        if backward {
            let g = kl_grad(tm, tl, q.mean.row(r), q.log_std.row(r));
            for j in 0..q.dim() {
                dm.set(r, j, g.d_mean_q[j] * inv);
                dl.set(r, j, g.d_log_std_q[j] * inv);
            }
        }
    }
    if backward {
        net.gaussian_backward(&tape, &q, &dm, &dl, true);
    }
    if update_stats {
        net.update_running_stats(&tape);
    }
    Ok((loss * inv).to_f64().unwrap_or(f64::NAN))
}

/// Demonstration discriminator `D(s) ∈ (0, 1)`.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub net: Net<f32>,
}

impl Discriminator {
    pub fn new(state_dim: usize, cfg: &GuidanceConfig, rng: &mut impl Rng) -> Result<Self> {
        let spec = NetSpec::new(state_dim, cfg.disc_hidden.clone(), 1, HeadKind::SigmoidScalar)
            .with_batch_norm(cfg.disc_batch_norm);
        Ok(Self { net: Net::new(spec, "disc", rng)? })
    }

    /// Clamped `D(s)` per row (eval mode).
    pub fn prob(&self, obs: &Matrix<f32>) -> Result<Vec<f64>> {
        let logits = self.net.predict(obs)?;
        Ok(logits.as_slice().iter().map(|&l| clamp_prob(sigmoid(l as f64))).collect())
    }

    pub fn prob_one(&self, obs: &[f32]) -> f64 {
        self.prob(&batch_from_rows(&[obs])).expect("observation width")[0]
    }

    /// Gate between posterior (weight `D`) and prior (weight `1 − D`) terms.
    pub fn support_weight(&self, obs: &[f32]) -> f64 {
        self.prob_one(obs)
    }

    pub fn reward(&self, obs: &[f32]) -> f64 {
        discriminator_reward(self.prob_one(obs))
    }

    /// One BCE update on `positives` (label 1) and `negatives` (label 0).
    pub fn train_step(&mut self, positives: &[&[f32]], negatives: &[&[f32]], smoothing: f64, opt: &Optimizer) -> Result<f64> {
        let rows: Vec<&[f32]> = positives.iter().chain(negatives).copied().collect();
        let labels: Vec<f64> = std::iter::repeat_n(1.0 - smoothing, positives.len())
            .chain(std::iter::repeat_n(smoothing, negatives.len()))
            .collect();
        let loss = bce_loss(&mut self.net, &batch_from_rows(&rows), &labels, true, true)?;
        opt.step(&mut self.net.store);
        Ok(loss)
    }

    pub fn folded(&self) -> Result<Self> {
        Ok(Self { net: self.net.folded()? })
    }
}

/// Learned guidance for one target task.
#[derive(Debug, Clone)]
pub struct Guidance {
    pub posterior: Net<f32>,
    pub discriminator: Discriminator,
}

#[derive(Debug, Clone, Default)]
pub struct GuidanceReport {
    pub posterior_losses: Vec<f64>,
    pub disc_losses: Vec<f64>,
}

fn sample_rows<'a>(pool: &[&'a [f32]], n: usize, rng: &mut impl Rng) -> Vec<&'a [f32]> {
    (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// Fit the skill posterior to the frozen encoder's output on demo windows.
pub fn train_posterior(
    skills: &SkillModel<f32>,
    demos: &Dataset,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<(Net<f32>, Vec<f64>)> {
    let sampler = WindowSampler::new(demos, skills.cfg.horizon)?;
    let windows = sampler.strided(demos, 1);
    let batch = WindowBatch::<f32>::new(&windows, demos.state_dim, demos.action_dim);
    let targets = skills.encode_windows(&batch)?;
    let s0 = batch.first_states();
    let mut init_rng = rng::stream(seed, "guidance/posterior_init", 0);
    let mut net = if cfg.posterior_init_from_prior {
        let mut n = skills.prior.clone();
        n.store.step = 0;
        for e in n.store.entries_mut() {
            e.first_moment.iter_mut().for_each(|x| *x = 0.0);
            e.second_moment.iter_mut().for_each(|x| *x = 0.0);
        }
        n
    } else {
        Net::new(SkillModel::<f32>::prior_spec(&skills.cfg, demos.state_dim), "posterior", &mut init_rng)?
    };
    let opt = Optimizer::radam(cfg.posterior_lr);
    let mut rng = rng::stream(seed, "guidance/posterior", 0);
    let mut losses = Vec::with_capacity(cfg.posterior_steps);
    let n = windows.len();
    for step in 0..cfg.posterior_steps {
        let idx: Vec<usize> = (0..cfg.posterior_batch.min(n.max(1))).map(|_| rng.random_range(0..n)).collect();
        let loss = posterior_loss(&mut net, &s0.select_rows(&idx), &targets.select_rows(&idx), true, true)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { what: "posterior loss".into(), step: step as u64, dump: None });
        }
        opt.step(&mut net.store);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("posterior step {step}: kl {loss:.4}");
        }
        losses.push(loss);
    }
    Ok((net, losses))
}

pub fn train_discriminator(
    task_agnostic: &Dataset,
    demos: &Dataset,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<(Discriminator, Vec<f64>)> {
    let pos: Vec<&[f32]> = demos.states().collect();
    let neg: Vec<&[f32]> = task_agnostic.states().collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut disc = Discriminator::new(demos.state_dim, cfg, &mut rng::stream(seed, "guidance/disc_init", 0))?;
    let opt = Optimizer::radam(cfg.disc_lr);
    let mut rng = rng::stream(seed, "guidance/disc", 0);
    let half = cfg.disc_batch / 2;
    let mut losses = Vec::with_capacity(cfg.disc_steps);
    for step in 0..cfg.disc_steps {
        let p = sample_rows(&pos, half, &mut rng);
        let q = sample_rows(&neg, half, &mut rng);
        let loss = disc.train_step(&p, &q, cfg.label_smoothing, &opt)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { what: "discriminator loss".into(), step: step as u64, dump: None });
        }
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("discriminator step {step}: bce {loss:.4}");
        }
        losses.push(loss);
    }
    Ok((disc, losses))
}

/// Continue discriminator training with agent replay states as negatives.
pub fn finetune_discriminator(
    disc: &mut Discriminator,
    replay_states: &[&[f32]],
    demos: &Dataset,
    cfg: &GuidanceConfig,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    if steps == 0 {
        return Ok(());
    }
    if replay_states.is_empty() {
        return Err(Error::EmptyInput);
    }
    let pos: Vec<&[f32]> = demos.states().collect();
    let opt = Optimizer::radam(cfg.disc_lr);
    let half = cfg.disc_batch / 2;
    for _ in 0..steps {
        let p = sample_rows(&pos, half, rng);
        let q = sample_rows(replay_states, half, rng);
        disc.train_step(&p, &q, cfg.label_smoothing, &opt)?;
    }
    Ok(())
}

pub fn train_guidance(
    skills: &SkillModel<f32>,
    task_agnostic: &Dataset,
    demos: &Dataset,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<(Guidance, GuidanceReport)> {
    cfg.validate()?;
    let (posterior, posterior_losses) = train_posterior(skills, demos, cfg, seed)?;
    let (discriminator, disc_losses) = train_discriminator(task_agnostic, demos, cfg, seed)?;
    Ok((Guidance { posterior, discriminator }, GuidanceReport { posterior_losses, disc_losses }))
}

impl Guidance {
    pub fn save(&self, ckpt: &mut Checkpoint) {
        self.posterior.save(ckpt, "guidance/posterior");
        self.discriminator.net.save(ckpt, "guidance/discriminator");
    }

    pub fn load(ckpt: &Checkpoint) -> Result<Self> {
        if !ckpt.has_prefix("guidance/") {
            return Err(Error::MissingCheckpoint("guidance".into()));
        }
        Ok(Self {
            posterior: Net::load(ckpt, "guidance/posterior")?,
            discriminator: Discriminator { net: Net::load(ckpt, "guidance/discriminator")? },
        })
    }
}

/// Area under the ROC curve of `positive` vs `negative` scores, ties
/// counted as one half.
pub fn auc(positive: &[f64], negative: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> =
        positive.iter().map(|&s| (s, true)).chain(negative.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of positive ranks with average rank for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}
