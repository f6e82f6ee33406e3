//! Downstream reinforcement learning: soft actor-critic over skill latents
//! with discriminator-gated prior/posterior regularization, and the flat and
//! skill-based baselines.
//!
//! All learners share one loop. A *latent* is either a skill `z` (executed by
//! the frozen low-level policy for up to `H` steps) or, for the flat
//! baselines, a primitive action executed for a single step.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use skild_nn::{
    kl_grad, kl_terms, tanh_squash, Checkpoint, tanh_squash_grad, GaussianBatch, HeadKind, Matrix, Mode as NetMode, NetSpec,
    Optimizer, Scalar, ScalarAdam,
};

use crate::data::{Dataset, WindowSampler};
use crate::guidance::{discriminator_reward, finetune_discriminator, posterior_loss, Discriminator, Guidance, GuidanceConfig};
use crate::maze::{EnvState, MazeSpec, PrimitiveAction, ACTION_DIM, OBS_DIM};
use crate::nets::{batch_from_rows, Net};
use crate::skills::{SkillExecutor, SkillModel, WindowBatch};
use crate::{rng, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Added inside the log of the squash Jacobian.
const SQUASH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Skild,
    Spirl,
    SacFlat,
    BcRl,
    DemoReplay,
    SkillBcRl,
    NoGail,
    PostOnly,
    NoPost,
    Imitation,
}

impl Mode {
    pub const ALL: [Mode; 10] = [
        Mode::Skild,
        Mode::Spirl,
        Mode::SacFlat,
        Mode::BcRl,
        Mode::DemoReplay,
        Mode::SkillBcRl,
        Mode::NoGail,
        Mode::PostOnly,
        Mode::NoPost,
        Mode::Imitation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Skild => "skild",
            Mode::Spirl => "spirl",
            Mode::SacFlat => "sac_flat",
            Mode::BcRl => "bc_rl",
            Mode::DemoReplay => "demo_replay",
            Mode::SkillBcRl => "skill_bc_rl",
            Mode::NoGail => "no_gail",
            Mode::PostOnly => "post_only",
            Mode::NoPost => "no_post",
            Mode::Imitation => "imitation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}`")))
    }

    pub fn is_flat(self) -> bool {
        matches!(self, Mode::SacFlat | Mode::BcRl | Mode::DemoReplay)
    }

    pub fn default_kappa(self) -> f64 {
        match self {
            Mode::Skild | Mode::NoPost => 0.9,
            Mode::Imitation => 1.0,
            _ => 0.0,
        }
    }

    /// Whether the policy is regularized toward skill distributions (as
    /// opposed to plain maximum entropy).
    pub fn gated(self) -> bool {
        !self.is_flat() && self != Mode::SkillBcRl
    }

    /// Fixed value of the support gate `D(s)` in the divergence penalty, if any.
    pub fn default_gate(self) -> Option<f64> {
        match self {
            Mode::Spirl | Mode::NoPost => Some(0.0),
            Mode::PostOnly => Some(1.0),
            _ => None,
        }
    }

    pub fn default_policy_init(self) -> PolicyInit {
        match self {
            Mode::Skild | Mode::PostOnly | Mode::Imitation | Mode::NoGail => PolicyInit::Posterior,
            Mode::Spirl | Mode::NoPost => PolicyInit::Prior,
            _ => PolicyInit::Random,
        }
    }

    pub fn needs_guidance(self) -> bool {
        self.default_kappa() > 0.0
            || self.default_policy_init() == PolicyInit::Posterior
            || self.default_gate() != Some(0.0) && self.gated()
    }

    pub fn needs_demos(self) -> bool {
        matches!(self, Mode::BcRl | Mode::DemoReplay | Mode::SkillBcRl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    Posterior,
    Prior,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub mode: Mode,
    /// Reward weight κ; the mode's default when absent.
    pub kappa: Option<f64>,
    /// Replace `D(s)` in the divergence gate by a constant.
    pub gate_override: Option<f64>,
    pub policy_init: Option<PolicyInit>,
    pub alpha: f64,
    pub alpha_q: f64,
    pub auto_alpha: bool,
    pub target_kl_prior: f64,
    pub target_kl_post: f64,
    pub alpha_lr: f64,
    /// Tune temperatures on `D`-weighted instead of plain batch-mean divergences.
    pub gated_alpha_update: bool,
    pub discount: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_env_steps: u64,
    pub total_env_steps: u64,
    /// Gradient steps per stored transition (macro-step or flat step).
    pub updates_per_transition: f64,
    pub flat_updates_per_transition: f64,
    pub critic_hidden: Vec<usize>,
    pub flat_policy_hidden: Vec<usize>,
    pub squash_scale: f64,
    /// Average the discriminator bonus over the states a skill visits.
    pub average_disc_bonus: bool,
    pub disc_finetune: bool,
    pub disc_finetune_period: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub bc_steps: usize,
    pub bc_lr: f64,
    pub bc_reg_weight: f64,
    pub log_every: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Skild,
            kappa: None,
            gate_override: None,
            policy_init: None,
            alpha: 0.1,
            alpha_q: 0.1,
            auto_alpha: true,
            target_kl_prior: 1.0,
            target_kl_post: 10.0,
            alpha_lr: 3e-4,
            gated_alpha_update: false,
            discount: 0.99,
            tau: 5e-3,
            lr: 3e-4,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            warmup_env_steps: 5000,
            total_env_steps: 150_000,
            updates_per_transition: 1.0,
            flat_updates_per_transition: 0.1,
            critic_hidden: vec![256, 256],
            flat_policy_hidden: vec![256, 256],
            squash_scale: 2.0,
            average_disc_bonus: false,
            disc_finetune: false,
            disc_finetune_period: 5000,
            eval_every: 5000,
            eval_episodes: 10,
            bc_steps: 2000,
            bc_lr: 1e-3,
            bc_reg_weight: 0.0,
            log_every: 10_000,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("rl: {m}")));
        let k = self.kappa();
        if !(0.0..=1.0).contains(&k) {
            return bad(format!("kappa {k} outside [0, 1]"));
        }
        if let Some(g) = self.gate_override {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("gate_override {g} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("alpha_q", self.alpha_q),
            ("alpha_lr", self.alpha_lr),
            ("lr", self.lr),
            ("tau", self.tau),
            ("discount", self.discount),
            ("bc_lr", self.bc_lr),
            ("bc_reg_weight", self.bc_reg_weight),
            ("updates_per_transition", self.updates_per_transition),
            ("flat_updates_per_transition", self.flat_updates_per_transition),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        if self.tau > 1.0 || self.discount > 1.0 {
            return bad("tau and discount must be ≤ 1".into());
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.eval_every == 0 || !(self.squash_scale > 0.0) {
            return bad("batch_size, buffer_capacity, eval_every and squash_scale must be positive".into());
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.kappa.unwrap_or(self.mode.default_kappa())
    }

    pub fn gate(&self) -> Option<f64> {
        self.gate_override.or(self.mode.default_gate())
    }

    pub fn policy_init(&self) -> PolicyInit {
        self.policy_init.unwrap_or(self.mode.default_policy_init())
    }
}

/// `(1 − κ)·r + κ·(log D − log(1 − D))`.
pub fn combined_reward(kappa: f64, r_env: f64, d: f64) -> f64 {
    (1.0 - kappa) * r_env + kappa * discriminator_reward(d)
}

/// `α_q·KL(π‖q)·D + α·KL(π‖p)·(1 − D)`.
pub fn gated_penalty(kl_post: f64, kl_prior: f64, d: f64, alpha: f64, alpha_q: f64) -> f64 {
    alpha_q * kl_post * d + alpha * kl_prior * (1.0 - d)
}

/// Gated penalty from the three Gaussians at one state.
pub fn gated_divergence_penalty(
    policy: &skild_nn::DiagGaussian<f64>,
    prior: &skild_nn::DiagGaussian<f64>,
    posterior: &skild_nn::DiagGaussian<f64>,
    d: f64,
    alpha: f64,
    alpha_q: f64,
) -> Result<f64> {
    Ok(gated_penalty(policy.kl(posterior)?, policy.kl(prior)?, d, alpha, alpha_q))
}

/// `r + η·(1 − terminal)·(min Q̄(s', z') − penalty(s'))`.
pub fn q_target(r_sum: f64, terminal: bool, discount: f64, min_q_next: f64, penalty_next: f64) -> f64 {
    if terminal {
        r_sum
    } else {
        r_sum + discount * (min_q_next - penalty_next)
    }
}

/// One projected gradient step on a temperature with loss `α·(δ − d̄)`:
/// the temperature grows while the measured divergence exceeds its target.
pub fn alpha_step(alpha: f64, adam: &mut ScalarAdam, lr: f64, divergence: f64, target: f64) -> f64 {
    let opt = Optimizer::adam(lr);
    (alpha - adam.delta(&opt, target - divergence)).max(0.0)
}

/// How the policy is regularized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    /// Gated KL to posterior and prior.
    Gated,
    /// `α·log π(z|s)` on squashed samples (maximum entropy).
    Entropy,
}

/// Inputs of one policy-loss evaluation.
#[derive(Debug, Clone)]
pub struct PolicyBatch<T> {
    pub obs: Matrix<T>,
    /// Standard-normal draws for the reparameterized sample.
    pub eps: Matrix<T>,
    pub prior: Option<GaussianBatch<T>>,
    pub posterior: Option<GaussianBatch<T>>,
    /// Support gate `D(s)` per row.
    pub gate: Vec<f64>,
    /// Frozen behaviour-cloning means for the L2 regularizer.
    pub bc_mean: Option<Matrix<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyWeights {
    pub alpha: f64,
    pub alpha_q: f64,
    pub regularizer: Regularizer,
    pub squash_scale: f64,
    pub bc_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyStats {
    pub loss: f64,
    pub mean_min_q: f64,
    pub kl_prior: f64,
    pub kl_post: f64,
    pub kl_prior_gated: f64,
    pub kl_post_gated: f64,
    /// Batch mean of the squashed log-density (entropy regularizer only).
    pub log_prob: f64,
}

fn f<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn t<T: Scalar>(x: f64) -> T {
    T::from_f64_lossy(x)
}

/// `scale·tanh(u/scale)`, kept strictly inside `(−scale, scale)` where
/// single precision would round onto the bound.
pub fn squash_open<T: Scalar>(u: T, scale: T) -> T {
    let z = tanh_squash(u, scale);
    let edge = scale * (T::one() - T::epsilon());
    if z > edge {
        edge
    } else if z < -edge {
        -edge
    } else {
        z
    }
}

/// Squashed sample and pre-squash values.
fn sample_squashed<T: Scalar>(g: &GaussianBatch<T>, eps: &Matrix<T>, scale: f64) -> (Matrix<T>, Matrix<T>) {
    let mut u = g.mean.clone();
    for ((ui, &ls), &e) in u.as_mut_slice().iter_mut().zip(g.log_std.as_slice()).zip(eps.as_slice()) {
        *ui += ls.exp() * e;
    }
    let z = u.map(|x| squash_open(x, t(scale)));
    (u, z)
}

/// `log N(u; μ, σ) − Σ log(1 − tanh²(u/s) + ε)` with `u = μ + σ·eps`.
fn squashed_log_prob_row(log_std: &[f64], eps: &[f64], u: &[f64], scale: f64) -> f64 {
    let mut lp = 0.0;
    for i in 0..u.len() {
        lp += -log_std[i] - 0.5 * eps[i] * eps[i] - 0.5 * LN_2PI;
        lp -= (tanh_squash_grad(u[i], scale) + SQUASH_EPS).ln();
    }
    lp
}

/// Critic input rows `s ⊕ z`.
fn critic_input<T: Scalar>(obs: &Matrix<T>, z: &Matrix<T>) -> Matrix<T> {
    obs.hcat(z)
}

/// Policy objective `mean(−min_i Q_i(s, z) + penalty(s) + bc)` with `z`
/// reparameterized. With `backward`, parameter gradients accumulate into
/// the policy only; critics receive input gradients only.
pub fn policy_loss<T: Scalar>(
    policy: &mut Net<T>,
    critics: &mut [Net<T>; 2],
    batch: &PolicyBatch<T>,
    w: &PolicyWeights,
    backward: bool,
) -> Result<PolicyStats> {
    let n = batch.obs.rows();
    let inv = 1.0 / n as f64;
    let (g, ptape) = policy.gaussian(&batch.obs, NetMode::Eval)?;
    let dim = g.dim();
    let (u, z) = sample_squashed(&g, &batch.eps, w.squash_scale);
    let x = critic_input(&batch.obs, &z);
    let (q1, t1) = critics[0].forward(&x, NetMode::Eval)?;
    let (q2, t2) = critics[1].forward(&x, NetMode::Eval)?;
    let mut stats = PolicyStats::default();
    let mut d_mean = Matrix::<T>::zeros(n, dim);
    let mut d_ls = Matrix::<T>::zeros(n, dim);
    let mut dq1 = Matrix::<T>::zeros(n, 1);
    let mut dq2 = Matrix::<T>::zeros(n, 1);
    let (mut gate_sum, mut ungate_sum) = (0.0, 0.0);
    for r in 0..n {
        let (a, b) = (f(q1.get(r, 0)), f(q2.get(r, 0)));
        let min_q = a.min(b);
        if a <= b {
            dq1.set(r, 0, t(-inv));
        } else {
            dq2.set(r, 0, t(-inv));
        }
        let mut row_loss = -min_q;
        let (m, ls) = (g.mean.row(r), g.log_std.row(r));
        match w.regularizer {
            Regularizer::Gated => {
                let d = batch.gate[r];
                gate_sum += d;
                ungate_sum += 1.0 - d;
                if let Some(post) = &batch.posterior {
                    let (pm, pl) = (post.mean.row(r), post.log_std.row(r));
                    let kl = f(kl_terms(m, ls, pm, pl));
                    stats.kl_post += kl;
                    stats.kl_post_gated += d * kl;
                    let c = w.alpha_q * d;
                    row_loss += c * kl;
                    if backward {
                        let gr = kl_grad(m, ls, pm, pl);
                        for j in 0..dim {
                            d_mean.set(r, j, d_mean.get(r, j) + gr.d_mean_p[j] * t(c * inv));
                            d_ls.set(r, j, d_ls.get(r, j) + gr.d_log_std_p[j] * t(c * inv));
                        }
                    }
                }
                if let Some(prior) = &batch.prior {
                    let (pm, pl) = (prior.mean.row(r), prior.log_std.row(r));
                    let kl = f(kl_terms(m, ls, pm, pl));
                    stats.kl_prior += kl;
                    stats.kl_prior_gated += (1.0 - d) * kl;
                    let c = w.alpha * (1.0 - d);
                    row_loss += c * kl;
                    if backward {
                        let gr = kl_grad(m, ls, pm, pl);
                        for j in 0..dim {
                            d_mean.set(r, j, d_mean.get(r, j) + gr.d_mean_p[j] * t(c * inv));
                            d_ls.set(r, j, d_ls.get(r, j) + gr.d_log_std_p[j] * t(c * inv));
                        }
                    }
                }
            }
            Regularizer::Entropy => {
                let lsf: Vec<f64> = ls.iter().map(|&x| f(x)).collect();
                let ef: Vec<f64> = batch.eps.row(r).iter().map(|&x| f(x)).collect();
                let uf: Vec<f64> = u.row(r).iter().map(|&x| f(x)).collect();
                let lp = squashed_log_prob_row(&lsf, &ef, &uf, w.squash_scale);
                stats.log_prob += lp;
                row_loss += w.alpha * lp;
                if backward {
                    for j in 0..dim {
                        // ∂/∂u of −log(1 − tanh² + ε), then through u = μ + σε.
                        let th = (uf[j] / w.squash_scale).tanh();
                        let gj = 1.0 - th * th;
                        let du = 2.0 * th * gj / (w.squash_scale * (gj + SQUASH_EPS));
                        let c = w.alpha * inv;
                        let sigma = lsf[j].exp();
                        d_mean.set(r, j, d_mean.get(r, j) + t(c * du));
                        d_ls.set(r, j, d_ls.get(r, j) + t(c * (du * sigma * ef[j] - 1.0)));
                    }
                }
            }
        }
        if let Some(bc) = &batch.bc_mean {
            for j in 0..dim {
                let diff = f(m[j]) - f(bc.get(r, j));
                row_loss += w.bc_weight * diff * diff;
                if backward {
                    d_mean.set(r, j, d_mean.get(r, j) + t(w.bc_weight * 2.0 * diff * inv));
                }
            }
        }
        stats.loss += row_loss;
        stats.mean_min_q += min_q;
    }
    stats.loss *= inv;
    stats.mean_min_q *= inv;
    stats.kl_prior *= inv;
    stats.kl_post *= inv;
    stats.log_prob *= inv;
    stats.kl_post_gated = if gate_sum > 0.0 { stats.kl_post_gated / gate_sum } else { 0.0 };
    stats.kl_prior_gated = if ungate_sum > 0.0 { stats.kl_prior_gated / ungate_sum } else { 0.0 };
    if backward {
        let obs_dim = batch.obs.cols();
        let dx1 = critics[0].backward(&t1, &dq1, false);
        let dx2 = critics[1].backward(&t2, &dq2, false);
        for r in 0..n {
            for j in 0..dim {
                let dz = dx1.get(r, obs_dim + j) + dx2.get(r, obs_dim + j);
                let du = dz * tanh_squash_grad(u.get(r, j), t(w.squash_scale));
                let sigma = g.log_std.get(r, j).exp();
                d_mean.set(r, j, d_mean.get(r, j) + du);
                d_ls.set(r, j, d_ls.get(r, j) + du * sigma * batch.eps.get(r, j));
            }
        }
        policy.gaussian_backward(&ptape, &g, &d_mean, &d_ls, true);
    }
    Ok(stats)
}

/// `mean (Q(x) − y)²`, accumulating gradients when `backward`.
pub fn critic_loss<T: Scalar>(critic: &mut Net<T>, x: &Matrix<T>, target: &[f64], backward: bool) -> Result<f64> {
    let (q, tape) = critic.forward(x, NetMode::Eval)?;
    let n = target.len() as f64;
    let mut loss = 0.0;
    let mut d = Matrix::zeros(q.rows(), 1);
    for (r, &y) in target.iter().enumerate() {
        let diff = f(q.get(r, 0)) - y;
        loss += diff * diff;
        d.set(r, 0, t(2.0 * diff / n));
    }
    if backward {
        critic.backward(&tape, &d, true);
    }
    Ok(loss / n)
}

/// One high-level replay entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: [f32; OBS_DIM],
    /// Executed (squashed) latent.
    pub z: Vec<f32>,
    /// Sum of environment rewards over the executed steps.
    pub r_env: f32,
    pub next_obs: [f32; OBS_DIM],
    /// Goal reached: no bootstrapping past this transition.
    pub terminal: bool,
    pub steps: u32,
    /// Mean discriminator bonus over visited states, when enabled.
    pub bonus_avg: Option<f32>,
    /// Prior and posterior `[mean | log_std]` at `obs` and at `next_obs`.
    pub guide: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: Vec::new(), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// Sizes of the agent's replay batch drawn from the agent and demo buffers.
pub fn demo_mix(batch: usize, agent_len: usize, demo_len: usize) -> (usize, usize) {
    match (agent_len, demo_len) {
        (0, _) => (0, batch),
        (_, 0) => (batch, 0),
        _ => (batch - batch / 2, batch / 2),
    }
}

/// How a latent turns into environment steps.
#[derive(Debug, Clone)]
pub enum Actuator {
    Skills { executor: SkillExecutor, horizon: usize },
    Primitive,
}

/// Result of executing one latent.
#[derive(Debug, Clone)]
pub struct MacroStep {
    pub visited: Vec<[f32; OBS_DIM]>,
    pub reward: f64,
    pub final_state: EnvState,
    pub done: bool,
    pub success: bool,
    pub steps: usize,
}

impl Actuator {
    pub fn execute(&self, maze: &MazeSpec, s: EnvState, latent: &[f32]) -> MacroStep {
        match self {
            Actuator::Skills { executor, horizon } => {
                let r = executor.execute(maze, s, latent, *horizon);
                MacroStep {
                    visited: r.steps.iter().map(|x| x.0).collect(),
                    reward: r.reward_sum(),
                    final_state: r.final_state,
                    done: r.done,
                    success: r.success,
                    steps: r.steps.len(),
                }
            }
            Actuator::Primitive => {
                let out = maze.step(&s, PrimitiveAction([latent[0] as f64, latent[1] as f64]));
                MacroStep {
                    visited: vec![maze.observe(&s)],
                    reward: out.reward,
                    final_state: out.state,
                    done: out.done,
                    success: out.success,
                    steps: 1,
                }
            }
        }
    }
}

/// Frozen skill distributions consulted by the gated regularizer.
#[derive(Debug, Clone)]
pub struct SkillGuides {
    pub prior: Option<Net<f32>>,
    pub posterior: Option<Net<f32>>,
    pub z_dim: usize,
}

impl SkillGuides {
    /// `[prior mean | prior log_std | post mean | post log_std]`; absent
    /// networks contribute zeros.
    pub fn at(&self, obs: &[f32]) -> Vec<f32> {
        let x = batch_from_rows::<f32>(&[obs]);
        let mut out = Vec::with_capacity(4 * self.z_dim);
        for net in [&self.prior, &self.posterior] {
            match net {
                Some(n) => out.extend_from_slice(n.predict(&x).expect("observation width").row(0)),
                None => out.extend(std::iter::repeat_n(0.0, 2 * self.z_dim)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub episode_return: f64,
    pub success_rate: f64,
    pub kl_prior: f64,
    pub kl_post: f64,
    pub alpha: f64,
    pub alpha_q: f64,
    pub r_disc_mean: f64,
}

pub const METRICS_HEADER: &str = "env_steps,episode_return,success_rate,kl_prior,kl_post,alpha,alpha_q,r_disc_mean";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.env_steps,
            self.episode_return,
            self.success_rate,
            self.kl_prior,
            self.kl_post,
            self.alpha,
            self.alpha_q,
            self.r_disc_mean
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_line());
    }
    s
}

/// The learner's state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: RlConfig,
    pub policy: Net<f32>,
    pub critics: [Net<f32>; 2],
    pub targets: [Net<f32>; 2],
    pub alpha: f64,
    pub alpha_q: f64,
    alpha_adam: ScalarAdam,
    alpha_q_adam: ScalarAdam,
    pub latent_dim: usize,
    pub squash_scale: f64,
    pub regularizer: Regularizer,
    /// Target for the temperature's divergence (KL to the prior, or log π).
    pub target_divergence: f64,
    pub bc_policy: Option<Net<f32>>,
    pub updates: u64,
}

/// Statistics of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub policy: PolicyStats,
    pub r_disc_mean: f64,
}

/// Inputs the learner reads from but never updates (except the
/// discriminator under finetuning).
pub struct Context<'a> {
    pub guides: &'a SkillGuides,
    pub discriminator: Option<&'a Discriminator>,
}

impl Agent {
    pub fn new(cfg: RlConfig, policy: Net<f32>, latent_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let flat = cfg.mode.is_flat();
        let spec = NetSpec::new(OBS_DIM + latent_dim, cfg.critic_hidden.clone(), 1, HeadKind::Scalar);
        let critics = [Net::new(spec.clone(), "q1", rng)?, Net::new(spec, "q2", rng)?];
        let targets = critics.clone();
        let regularizer = if cfg.mode.gated() { Regularizer::Gated } else { Regularizer::Entropy };
        let target_divergence = match regularizer {
            Regularizer::Gated => cfg.target_kl_prior,
            Regularizer::Entropy => latent_dim as f64,
        };
        Ok(Self {
            squash_scale: if flat { 1.0 } else { cfg.squash_scale },
            alpha: cfg.alpha,
            alpha_q: cfg.alpha_q,
            cfg,
            policy,
            critics,
            targets,
            alpha_adam: ScalarAdam::default(),
            alpha_q_adam: ScalarAdam::default(),
            latent_dim,
            regularizer,
            target_divergence,
            bc_policy: None,
            updates: 0,
        })
    }

    /// Policy weights and temperatures.
    pub fn save_policy(&self, ckpt: &mut Checkpoint) {
        self.policy.save(ckpt, "policy");
        ckpt.set_scalar("policy#alpha", self.alpha);
        ckpt.set_scalar("policy#alpha_q", self.alpha_q);
        ckpt.set_scalar("policy#squash_scale", self.squash_scale);
    }

    fn weights(&self) -> PolicyWeights {
        PolicyWeights {
            alpha: self.alpha,
            alpha_q: self.alpha_q,
            regularizer: self.regularizer,
            squash_scale: self.squash_scale,
            bc_weight: if self.bc_policy.is_some() { self.cfg.bc_reg_weight } else { 0.0 },
        }
    }

    /// Sampled (training) or mean (evaluation) squashed latent.
    pub fn act(&self, obs: &[f32], deterministic: bool, rng: &mut impl Rng) -> Vec<f32> {
        let g = self.policy.predict_gaussian(&batch_from_rows(&[obs])).expect("observation width");
        let scale = self.squash_scale as f32;
        (0..self.latent_dim)
            .map(|j| {
                let m = g.mean.get(0, j);
                let u = if deterministic {
                    m
                } else {
                    m + g.log_std.get(0, j).exp() * rng.sample::<f64, _>(StandardNormal) as f32
                };
                squash_open(u, scale)
            })
            .collect()
    }

    fn gates(&self, ctx: &Context, obs: &Matrix<f32>) -> Result<Vec<f64>> {
        if let Some(g) = self.cfg.gate() {
            return Ok(vec![g; obs.rows()]);
        }
        match ctx.discriminator {
            Some(d) => d.prob(obs),
            None => Ok(vec![0.0; obs.rows()]),
        }
    }

    fn guides_of(&self, items: &[&Transition], next: bool, ctx: &Context) -> (Option<GaussianBatch<f32>>, Option<GaussianBatch<f32>>) {
        let zd = self.latent_dim;
        let base = if next { 4 * zd } else { 0 };
        let pick = |off: usize| {
            let mean = Matrix::from_vec(items.len(), zd, items.iter().flat_map(|t| t.guide[base + off..base + off + zd].iter().copied()).collect());
            let ls = Matrix::from_vec(
                items.len(),
                zd,
                items.iter().flat_map(|t| t.guide[base + off + zd..base + off + 2 * zd].iter().copied()).collect(),
            );
            GaussianBatch::from_parts(mean, ls)
        };
        if self.regularizer != Regularizer::Gated {
            return (None, None);
        }
        let prior = ctx.guides.prior.as_ref().map(|_| pick(0));
        let post = ctx.guides.posterior.as_ref().map(|_| pick(2 * zd));
        (prior, post)
    }

    /// Q-targets for a batch of transitions (Algorithm 1, lines 10–12).
    pub fn targets_for(&self, items: &[&Transition], ctx: &Context, rng: &mut impl Rng) -> Result<(Vec<f64>, f64)> {
        let n = items.len();
        let obs = batch_from_rows::<f32>(&items.iter().map(|t| &t.obs[..]).collect::<Vec<_>>());
        let next = batch_from_rows::<f32>(&items.iter().map(|t| &t.next_obs[..]).collect::<Vec<_>>());
        let kappa = self.cfg.kappa();
        let mut bonus = vec![0.0; n];
        if kappa > 0.0 {
            let d_now = match ctx.discriminator {
                Some(d) => d.prob(&obs)?,
                None => return Err(Error::MissingCheckpoint("discriminator".into())),
            };
            for (i, t) in items.iter().enumerate() {
                bonus[i] = match t.bonus_avg {
                    Some(b) if self.cfg.average_disc_bonus => b as f64,
                    _ => discriminator_reward(d_now[i]),
                };
            }
        }
        let r_disc_mean = bonus.iter().sum::<f64>() / n as f64;
        let (g, _) = self.policy.gaussian(&next, NetMode::Eval)?;
        let eps = crate::skills::normal_matrix::<f32>(n, self.latent_dim, rng);
        let (u, z) = sample_squashed(&g, &eps, self.squash_scale);
        let x = critic_input(&next, &z);
        let q1 = self.targets[0].predict(&x)?;
        let q2 = self.targets[1].predict(&x)?;
        let gate_next = if self.regularizer == Regularizer::Gated { self.gates(ctx, &next)? } else { vec![0.0; n] };
        let (prior, post) = self.guides_of(items, true, ctx);
        let mut out = Vec::with_capacity(n);
        for (i, tr) in items.iter().enumerate() {
            let r_sum = (1.0 - kappa) * tr.r_env as f64 + kappa * bonus[i];
            let (m, ls) = (g.mean.row(i), g.log_std.row(i));
            let penalty = match self.regularizer {
                Regularizer::Gated => {
                    let kl_post = post.as_ref().map_or(0.0, |p| kl_terms(m, ls, p.mean.row(i), p.log_std.row(i)) as f64);
                    let kl_prior = prior.as_ref().map_or(0.0, |p| kl_terms(m, ls, p.mean.row(i), p.log_std.row(i)) as f64);
                    gated_penalty(kl_post, kl_prior, gate_next[i], self.alpha, self.alpha_q)
                }
                Regularizer::Entropy => {
                    let lsf: Vec<f64> = ls.iter().map(|&x| x as f64).collect();
                    let ef: Vec<f64> = eps.row(i).iter().map(|&x| x as f64).collect();
                    let uf: Vec<f64> = u.row(i).iter().map(|&x| x as f64).collect();
                    self.alpha * squashed_log_prob_row(&lsf, &ef, &uf, self.squash_scale)
                }
            };
            let min_q = (q1.get(i, 0) as f64).min(q2.get(i, 0) as f64);
            out.push(q_target(r_sum, tr.terminal, self.cfg.discount, min_q, penalty));
        }
        Ok((out, r_disc_mean))
    }

    /// One gradient step: Q-target, policy, critics, temperatures, Polyak.
    pub fn update(&mut self, items: &[&Transition], ctx: &Context, rng: &mut impl Rng) -> Result<UpdateStats> {
        let n = items.len();
        let (target, r_disc_mean) = self.targets_for(items, ctx, rng)?;

        let obs = batch_from_rows::<f32>(&items.iter().map(|t| &t.obs[..]).collect::<Vec<_>>());
        let (prior, posterior) = self.guides_of(items, false, ctx);
        let gate = if self.regularizer == Regularizer::Gated { self.gates(ctx, &obs)? } else { vec![0.0; n] };
        let bc_mean = match &self.bc_policy {
            Some(bc) if self.cfg.bc_reg_weight > 0.0 => Some(bc.predict_gaussian(&obs)?.mean),
            _ => None,
        };
        let batch = PolicyBatch {
            eps: crate::skills::normal_matrix(n, self.latent_dim, rng),
            obs,
            prior,
            posterior,
            gate,
            bc_mean,
        };
        let w = self.weights();
        let stats = policy_loss(&mut self.policy, &mut self.critics, &batch, &w, true)?;
        let opt = Optimizer::adam(self.cfg.lr);
        opt.step(&mut self.policy.store);

        let z = Matrix::from_vec(n, self.latent_dim, items.iter().flat_map(|t| t.z.iter().copied()).collect());
        let x = critic_input(&batch.obs, &z);
        let mut critic_l = 0.0;
        for c in &mut self.critics {
            critic_l += critic_loss(c, &x, &target, true)?;
            opt.step(&mut c.store);
        }
        if !critic_l.is_finite() || !stats.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                what: if critic_l.is_finite() { "policy loss" } else { "critic loss" }.into(),
                step: self.updates,
                dump: None,
            });
        }

        if self.cfg.auto_alpha {
            match self.regularizer {
                Regularizer::Gated => {
                    let (kp, kq) = if self.cfg.gated_alpha_update {
                        (stats.kl_prior_gated, stats.kl_post_gated)
                    } else {
                        (stats.kl_prior, stats.kl_post)
                    };
                    if batch.prior.is_some() && self.cfg.gate() != Some(1.0) {
                        self.alpha = alpha_step(self.alpha, &mut self.alpha_adam, self.cfg.alpha_lr, kp, self.target_divergence);
                    }
                    if batch.posterior.is_some() && self.cfg.gate() != Some(0.0) {
                        self.alpha_q =
                            alpha_step(self.alpha_q, &mut self.alpha_q_adam, self.cfg.alpha_lr, kq, self.cfg.target_kl_post);
                    }
                }
                Regularizer::Entropy => {
                    self.alpha =
                        alpha_step(self.alpha, &mut self.alpha_adam, self.cfg.alpha_lr, stats.log_prob, self.target_divergence);
                }
            }
        }
        let tau = self.cfg.tau as f32;
        for (tg, c) in self.targets.iter_mut().zip(&self.critics) {
            tg.store.polyak_from(&c.store, tau)?;
        }
        self.updates += 1;
        Ok(UpdateStats { critic_loss: critic_l / 2.0, policy: stats, r_disc_mean })
    }
}

/// Everything `train` may need; which fields are required depends on the mode.
pub struct RlInputs<'a> {
    pub maze: &'a MazeSpec,
    pub skills: Option<&'a SkillModel<f32>>,
    pub guidance: Option<&'a Guidance>,
    pub demos: Option<&'a Dataset>,
    pub guidance_cfg: GuidanceConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PretrainStats {
    pub initial: f64,
    pub final_: f64,
}

pub struct RlOutcome {
    pub agent: Agent,
    pub metrics: Vec<MetricsRow>,
    pub pretrain: Option<PretrainStats>,
    pub discriminator: Option<Discriminator>,
}

fn require<'a, T>(x: Option<&'a T>, what: &str) -> Result<&'a T> {
    x.ok_or_else(|| Error::MissingCheckpoint(what.into()))
}

/// Behaviour cloning of a flat policy: `mean ‖tanh(μ(s)) − a‖²` over demo steps.
pub fn pretrain_flat_bc(policy: &mut Net<f32>, demos: &Dataset, steps: usize, lr: f64, rng: &mut impl Rng) -> Result<PretrainStats> {
    let pairs: Vec<(&[f32], &[f32])> = demos
        .trajectories
        .iter()
        .flat_map(|t| (0..t.len(demos.action_dim)).map(move |i| (t.state(i, demos.state_dim), t.action(i, demos.action_dim))))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let all_obs = batch_from_rows::<f32>(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let all_act: Vec<f32> = pairs.iter().flat_map(|p| p.1.iter().copied()).collect();
    let mse = |net: &Net<f32>| -> Result<f64> {
        let g = net.predict_gaussian(&all_obs)?;
        let se: f64 = g.mean.as_slice().iter().zip(&all_act).map(|(&m, &a)| ((m.tanh() - a) as f64).powi(2)).sum();
        Ok(se / all_act.len() as f64)
    };
    let initial = mse(policy)?;
    let opt = Optimizer::adam(lr);
    let bs = 256.min(pairs.len());
    for _ in 0..steps {
        let idx: Vec<usize> = (0..bs).map(|_| rng.random_range(0..pairs.len())).collect();
        let x = all_obs.select_rows(&idx);
        let (g, tape) = policy.gaussian(&x, NetMode::Train)?;
        let mut dm = Matrix::zeros(bs, g.dim());
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..g.dim() {
                let th = g.mean.get(r, j).tanh();
                let a = pairs[i].1[j];
                dm.set(r, j, 2.0 * (th - a) * (1.0 - th * th) / bs as f32);
            }
        }
        let dl = Matrix::zeros(bs, g.dim());
        policy.gaussian_backward(&tape, &g, &dm, &dl, true);
        opt.step(&mut policy.store);
    }
    Ok(PretrainStats { initial, final_: mse(policy)? })
}

/// Behaviour cloning of the skill policy onto encoder outputs of demo windows.
pub fn pretrain_skill_bc(
    policy: &mut Net<f32>,
    skills: &SkillModel<f32>,
    demos: &Dataset,
    steps: usize,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<PretrainStats> {
    let sampler = WindowSampler::new(demos, skills.cfg.horizon)?;
    let windows = sampler.strided(demos, 1);
    let wb = WindowBatch::<f32>::new(&windows, demos.state_dim, demos.action_dim);
    let targets = skills.encode_windows(&wb)?;
    let s0 = wb.first_states();
    let mean_kl = |net: &Net<f32>| -> Result<f64> {
        let q = net.predict_gaussian(&s0)?;
        Ok(targets.kl_rows(&q)?.iter().map(|&k| k as f64).sum::<f64>() / windows.len() as f64)
    };
    let initial = mean_kl(policy)?;
    let opt = Optimizer::adam(lr);
    let n = windows.len();
    for _ in 0..steps {
        let idx: Vec<usize> = (0..256.min(n)).map(|_| rng.random_range(0..n)).collect();
        posterior_loss(policy, &s0.select_rows(&idx), &targets.select_rows(&idx), true, false)?;
        opt.step(&mut policy.store);
    }
    Ok(PretrainStats { initial, final_: mean_kl(policy)? })
}

fn demo_transitions(demos: &Dataset) -> Vec<Transition> {
    let mut out = Vec::new();
    for tr in &demos.trajectories {
        let n = tr.len(demos.action_dim);
        for i in 0..n {
            let mut obs = [0.0; OBS_DIM];
            obs.copy_from_slice(tr.state(i, demos.state_dim));
            let mut next_obs = [0.0; OBS_DIM];
            next_obs.copy_from_slice(tr.state(i + 1, demos.state_dim));
            let last = i + 1 == n;
            out.push(Transition {
                obs,
                z: tr.action(i, demos.action_dim).to_vec(),
                r_env: if last { 100.0 } else { 0.0 },
                next_obs,
                terminal: last,
                steps: 1,
                bonus_avg: None,
                guide: Vec::new(),
            });
        }
    }
    out
}

/// Outcome of deterministic evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mean_return: f64,
    pub success_rate: f64,
}

pub fn evaluate(agent: &Agent, maze: &MazeSpec, actuator: &Actuator, episodes: usize, seed: u64) -> EvalResult {
    let mut total = 0.0;
    let mut wins = 0;
    let mut dummy = rng::stream(seed, "rl/eval_dummy", 0);
    for ep in 0..episodes {
        let mut reset_rng = rng::stream(seed, "rl/eval", ep as u64);
        let mut s = maze.reset(&mut reset_rng);
        loop {
            let z = agent.act(&maze.observe(&s), true, &mut dummy);
            let m = actuator.execute(maze, s, &z);
            total += m.reward;
            s = m.final_state;
            if m.done {
                wins += m.success as usize;
                break;
            }
        }
    }
    let n = episodes.max(1) as f64;
    EvalResult { mean_return: total / n, success_rate: wins as f64 / n }
}

/// Build the initial policy network for `cfg`.
pub fn initial_policy(cfg: &RlConfig, inputs: &RlInputs, rng: &mut impl Rng) -> Result<(Net<f32>, usize)> {
    if cfg.mode.is_flat() {
        let spec = NetSpec::new(OBS_DIM, cfg.flat_policy_hidden.clone(), ACTION_DIM, HeadKind::Gaussian);
        return Ok((Net::new(spec, "policy", rng)?, ACTION_DIM));
    }
    let skills = require(inputs.skills, "skill model")?;
    let z_dim = skills.cfg.z_dim;
    let net = match cfg.policy_init() {
        PolicyInit::Posterior => require(inputs.guidance, "guidance")?.posterior.folded()?,
        PolicyInit::Prior => skills.prior.folded()?,
        PolicyInit::Random => {
            let spec = SkillModel::<f32>::prior_spec(&skills.cfg, OBS_DIM).with_batch_norm(false);
            Net::new(spec, "policy", rng)?
        }
    };
    Ok((net, z_dim))
}

fn dump_batch(dir: &Path, items: &[&Transition]) -> Option<PathBuf> {
    let path = dir.join("nonfinite_batch.txt");
    let mut s = String::new();
    for t in items {
        let _ = writeln!(s, "{:?}", t);
    }
    std::fs::write(&path, s).ok().map(|_| path)
}

/// Run one downstream training job.
pub fn train(cfg: &RlConfig, inputs: &RlInputs, seed: u64, dump_dir: Option<&Path>) -> Result<RlOutcome> {
    train_with(cfg, inputs, seed, dump_dir, &mut |_, _| Ok(()))
}

/// [`train`], calling `on_eval` after every evaluation.
pub fn train_with(
    cfg: &RlConfig,
    inputs: &RlInputs,
    seed: u64,
    dump_dir: Option<&Path>,
    on_eval: &mut dyn FnMut(&Agent, &MetricsRow) -> Result<()>,
) -> Result<RlOutcome> {
    cfg.validate()?;
    let mode = cfg.mode;
    let maze = inputs.maze;
    let mut init_rng = rng::stream(seed, "rl/init", 0);
    let (mut policy, latent_dim) = initial_policy(cfg, inputs, &mut init_rng)?;

    let kappa = cfg.kappa();
    let gated = mode.gated();
    let needs_disc = kappa > 0.0 || (gated && cfg.gate().is_none());
    let mut discriminator = if needs_disc {
        Some(require(inputs.guidance, "guidance")?.discriminator.clone())
    } else {
        None
    };
    let guides = if mode.is_flat() {
        SkillGuides { prior: None, posterior: None, z_dim: latent_dim }
    } else {
        let skills = require(inputs.skills, "skill model")?;
        let want_post = gated && cfg.gate() != Some(0.0);
        let posterior = if want_post { Some(require(inputs.guidance, "guidance")?.posterior.folded()?) } else { None };
        let prior = if gated && cfg.gate() != Some(1.0) { Some(skills.prior.folded()?) } else { None };
        SkillGuides { prior, posterior, z_dim: latent_dim }
    };

    let mut pretrain = None;
    let mut bc_policy = None;
    let mut bc_rng = rng::stream(seed, "rl/bc", 0);
    match mode {
        Mode::BcRl => {
            let demos = require(inputs.demos, "demonstrations")?;
            pretrain = Some(pretrain_flat_bc(&mut policy, demos, cfg.bc_steps, cfg.bc_lr, &mut bc_rng)?);
            bc_policy = Some(policy.clone());
        }
        Mode::SkillBcRl => {
            let demos = require(inputs.demos, "demonstrations")?;
            let skills = require(inputs.skills, "skill model")?;
            pretrain = Some(pretrain_skill_bc(&mut policy, skills, demos, cfg.bc_steps, cfg.bc_lr, &mut bc_rng)?);
        }
        _ => {}
    }
    for e in policy.store.entries_mut() {
        e.first_moment.iter_mut().for_each(|x| *x = 0.0);
        e.second_moment.iter_mut().for_each(|x| *x = 0.0);
    }
    policy.store.step = 0;

    let mut agent = Agent::new(cfg.clone(), policy, latent_dim, &mut init_rng)?;
    agent.bc_policy = bc_policy;

    let actuator = if mode.is_flat() {
        Actuator::Primitive
    } else {
        let skills = require(inputs.skills, "skill model")?;
        Actuator::Skills { executor: skills.executor()?, horizon: skills.cfg.horizon }
    };
    let warmup_prior = if mode.is_flat() { None } else { Some(require(inputs.skills, "skill model")?.prior.folded()?) };

    let mut demo_buffer = Vec::new();
    if mode == Mode::DemoReplay {
        demo_buffer = demo_transitions(require(inputs.demos, "demonstrations")?);
    }

    let updates_per = if mode.is_flat() { cfg.flat_updates_per_transition } else { cfg.updates_per_transition };
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut env_rng = rng::stream(seed, "rl/env", 0);
    let mut act_rng = rng::stream(seed, "rl/act", 0);
    let mut batch_rng = rng::stream(seed, "rl/batch", 0);
    let mut update_rng = rng::stream(seed, "rl/update", 0);
    let mut disc_rng = rng::stream(seed, "rl/disc", 0);

    let mut metrics = Vec::new();
    let mut env_steps = 0u64;
    let mut next_eval = 0u64;
    let mut next_finetune = cfg.disc_finetune_period.max(1);
    let mut update_credit = 0.0;
    let mut recent = (0.0, 0.0, 0.0, 0usize);
    let mut state = maze.reset(&mut env_rng);
    let mut episode_done = false;
    loop {
        if env_steps >= next_eval {
            let ev = evaluate(&agent, maze, &actuator, cfg.eval_episodes, rng::child_seed(seed, "rl/eval_round", env_steps));
            let k = recent.3.max(1) as f64;
            metrics.push(MetricsRow {
                env_steps,
                episode_return: ev.mean_return,
                success_rate: ev.success_rate,
                kl_prior: recent.0 / k,
                kl_post: recent.1 / k,
                alpha: agent.alpha,
                alpha_q: agent.alpha_q,
                r_disc_mean: recent.2 / k,
            });
            on_eval(&agent, metrics.last().expect("row just pushed"))?;
            recent = (0.0, 0.0, 0.0, 0);
            next_eval += cfg.eval_every;
        }
        if env_steps >= cfg.total_env_steps {
            break;
        }
        if episode_done {
            state = maze.reset(&mut env_rng);
        }
        let obs = maze.observe(&state);
        let warm = env_steps < cfg.warmup_env_steps;
        let z: Vec<f32> = match (&warmup_prior, warm) {
            (Some(prior), true) => {
                let g = prior.predict_gaussian(&batch_from_rows(&[&obs[..]]))?;
                (0..latent_dim)
                    .map(|j| {
                        let u = g.mean.get(0, j) + g.log_std.get(0, j).exp() * act_rng.sample::<f64, _>(StandardNormal) as f32;
                        squash_open(u, agent.squash_scale as f32)
                    })
                    .collect()
            }
            (None, true) => (0..latent_dim).map(|_| act_rng.random_range(-1.0f32..1.0)).collect(),
            _ => agent.act(&obs, false, &mut act_rng),
        };
        let step = actuator.execute(maze, state, &z);
        debug_assert!(step.steps >= 1);
        let next_obs = maze.observe(&step.final_state);
        let bonus_avg = match (&discriminator, cfg.average_disc_bonus) {
            (Some(d), true) => {
                let rows: Vec<&[f32]> = step.visited.iter().map(|v| &v[..]).collect();
                let p = d.prob(&batch_from_rows(&rows))?;
                Some((p.iter().map(|&x| discriminator_reward(x)).sum::<f64>() / p.len() as f64) as f32)
            }
            _ => None,
        };
        let mut guide = Vec::new();
        if guides.prior.is_some() || guides.posterior.is_some() {
            guide = guides.at(&obs);
            guide.extend(guides.at(&next_obs));
        }
        buffer.push(Transition {
            obs,
            z,
            r_env: step.reward as f32,
            next_obs,
            terminal: step.success,
            steps: step.steps as u32,
            bonus_avg,
            guide,
        });
        env_steps += step.steps as u64;
        state = step.final_state;
        episode_done = step.done;

        if env_steps >= cfg.warmup_env_steps {
            update_credit += updates_per;
            while update_credit >= 1.0 {
                update_credit -= 1.0;
                let items: Vec<&Transition> = if mode == Mode::DemoReplay {
                    let (na, nd) = demo_mix(cfg.batch_size, buffer.len(), demo_buffer.len());
                    let mut v: Vec<&Transition> = buffer.sample_indices(na, &mut batch_rng).into_iter().map(|i| buffer.get(i)).collect();
                    v.extend((0..nd).map(|_| &demo_buffer[batch_rng.random_range(0..demo_buffer.len())]));
                    v
                } else {
                    buffer.sample_indices(cfg.batch_size, &mut batch_rng).into_iter().map(|i| buffer.get(i)).collect()
                };
                let ctx = Context { guides: &guides, discriminator: discriminator.as_ref() };
                let st = match agent.update(&items, &ctx, &mut update_rng) {
                    Err(Error::NonFiniteLoss { what, step, .. }) => {
                        let dump = dump_dir.and_then(|d| dump_batch(d, &items));
                        return Err(Error::NonFiniteLoss { what, step, dump });
                    }
                    other => other?,
                };
                recent.0 += st.policy.kl_prior;
                recent.1 += st.policy.kl_post;
                recent.2 += st.r_disc_mean;
                recent.3 += 1;
                if cfg.log_every > 0 && agent.updates % cfg.log_every == 0 {
                    log::info!(
                        "{} update {} env {}: critic {:.3} q {:.2} klp {:.2} klq {:.2} α {:.3} αq {:.3}",
                        mode.name(),
                        agent.updates,
                        env_steps,
                        st.critic_loss,
                        st.policy.mean_min_q,
                        st.policy.kl_prior,
                        st.policy.kl_post,
                        agent.alpha,
                        agent.alpha_q
                    );
                }
            }
        }
        if cfg.disc_finetune && env_steps >= next_finetune {
            if let Some(d) = discriminator.as_mut() {
                let demos = require(inputs.demos, "demonstrations")?;
                let states: Vec<&[f32]> = buffer.iter().map(|t| &t.obs[..]).collect();
                finetune_discriminator(d, &states, demos, &inputs.guidance_cfg, inputs.guidance_cfg.finetune_steps, &mut disc_rng)?;
            }
            next_finetune += cfg.disc_finetune_period.max(1);
        }
    }
    Ok(RlOutcome { agent, metrics, pretrain, discriminator })
}

/// First evaluation step at which the success rate reached `level`.
pub fn steps_to_success(rows: &[MetricsRow], level: f64) -> Option<u64> {
    rows.iter().find(|r| r.success_rate >= level).map(|r| r.env_steps)
}
