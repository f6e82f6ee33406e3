//! Skill embedding model: sequence encoder q(z | s_{0:H-1}, a_{0:H-2}),
//! low-level skill policy π(a | s, z) and state-conditioned skill prior p(z | s₀).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use skild_nn::{
    kl_grad, kl_terms, Checkpoint, GaussianBatch, HeadKind, Matrix, Mlp, MlpTape, Mode, NetSpec, Optimizer, ParamStore,
    RnnEncoder, RnnEncoderTape, Scalar,
};

use crate::data::{Dataset, SkillWindow, WindowSampler};
use crate::maze::{EnvState, MazeSpec, PrimitiveAction};
use crate::nets::{short_f64, Net};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Lstm,
    /// Flattened window through an MLP; for debugging.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillModelConfig {
    pub horizon: usize,
    pub z_dim: usize,
    pub beta: f64,
    /// Closed-loop π(a|s,z) when true, open-loop p(a|z) otherwise.
    pub state_conditioned_decoder: bool,
    pub encoder: EncoderKind,
    pub encoder_hidden: usize,
    pub decoder_hidden: Vec<usize>,
    pub prior_hidden: Vec<usize>,
    pub batch_norm: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub train_steps: usize,
    pub grad_clip: Option<f64>,
    pub weight_decay: f64,
    pub validation_fraction: f64,
    pub log_every: usize,
}

impl Default for SkillModelConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            z_dim: 10,
            beta: 1e-3,
            state_conditioned_decoder: true,
            encoder: EncoderKind::Lstm,
            encoder_hidden: 128,
            decoder_hidden: vec![128; 3],
            prior_hidden: vec![128; 5],
            batch_norm: true,
            lr: 1e-3,
            batch_size: 128,
            train_steps: 10_000,
            grad_clip: None,
            weight_decay: 0.0,
            validation_fraction: 0.1,
            log_every: 500,
        }
    }
}

impl SkillModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("skill_model: {m}")));
        if self.horizon < 2 {
            return bad("horizon must be ≥ 2");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if self.z_dim == 0 || self.batch_size == 0 || self.encoder_hidden == 0 {
            return bad("z_dim, batch_size and encoder_hidden must be positive");
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return bad("lr must be positive and weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    fn optimizer(&self) -> Optimizer {
        Optimizer { grad_clip: self.grad_clip, weight_decay: self.weight_decay, ..Optimizer::radam(self.lr) }
    }
}

#[derive(Debug, Clone)]
pub enum SkillEncoder {
    Recurrent(RnnEncoder),
    Flat(Mlp),
}

enum EncoderTape<T> {
    Recurrent(RnnEncoderTape<T>),
    Flat(MlpTape<T>),
}

/// A batch of windows in network precision.
#[derive(Debug, Clone)]
pub struct WindowBatch<T> {
    pub size: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    /// `size × horizon × state_dim`.
    pub states: Vec<T>,
    /// `size × (horizon−1) × action_dim`.
    pub actions: Vec<T>,
}

impl<T: Scalar> WindowBatch<T> {
    pub fn new(windows: &[SkillWindow], state_dim: usize, action_dim: usize) -> Self {
        let horizon = windows[0].states.len() / state_dim;
        let conv = |x: &f32| T::from_f64_lossy(*x as f64);
        Self {
            size: windows.len(),
            horizon,
            state_dim,
            action_dim,
            states: windows.iter().flat_map(|w| w.states.iter().map(conv)).collect(),
            actions: windows.iter().flat_map(|w| w.actions.iter().map(conv)).collect(),
        }
    }

    fn state(&self, b: usize, t: usize) -> &[T] {
        let i = (b * self.horizon + t) * self.state_dim;
        &self.states[i..i + self.state_dim]
    }

    fn action(&self, b: usize, t: usize) -> &[T] {
        let i = (b * (self.horizon - 1) + t) * self.action_dim;
        &self.actions[i..i + self.action_dim]
    }

    /// Encoder input at step `t`: `s_t ⊕ a_t`, with a zero action at the last step.
    fn step_input(&self, t: usize) -> Matrix<T> {
        let w = self.state_dim + self.action_dim;
        let mut m = Matrix::zeros(self.size, w);
        for b in 0..self.size {
            let row = m.row_mut(b);
            row[..self.state_dim].copy_from_slice(self.state(b, t));
            if t + 1 < self.horizon {
                row[self.state_dim..].copy_from_slice(self.action(b, t));
            }
        }
        m
    }

    pub fn first_states(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.size, self.state_dim);
        for b in 0..self.size {
            m.row_mut(b).copy_from_slice(self.state(b, 0));
        }
        m
    }
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SkillLoss {
    /// `Σ_t ‖a_t − π(s_t, z)‖²`, averaged over the batch.
    pub reconstruction: f64,
    /// `KL(q ‖ N(0, I))`, unweighted, batch mean.
    pub embedding_kl: f64,
    /// `KL(sg(q) ‖ p(s₀))`, batch mean.
    pub prior_kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct SkillModel<T> {
    pub cfg: SkillModelConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub encoder: SkillEncoder,
    pub encoder_store: ParamStore<T>,
    pub decoder: Net<T>,
    pub prior: Net<T>,
}

impl<T: Scalar> SkillModel<T> {
    pub fn new(cfg: SkillModelConfig, state_dim: usize, action_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let step_dim = state_dim + action_dim;
        let mut encoder_store = ParamStore::new();
        let encoder = match cfg.encoder {
            EncoderKind::Lstm => SkillEncoder::Recurrent(RnnEncoder::new(
                &mut encoder_store,
                "encoder",
                step_dim,
                cfg.encoder_hidden,
                cfg.z_dim,
                rng,
            )),
            EncoderKind::Flat => {
                let spec = NetSpec::new(cfg.horizon * step_dim, vec![cfg.encoder_hidden; 2], cfg.z_dim, HeadKind::Gaussian);
                SkillEncoder::Flat(Mlp::new(spec, &mut encoder_store, "encoder", rng)?)
            }
        };
        let decoder_in = if cfg.state_conditioned_decoder { state_dim + cfg.z_dim } else { cfg.z_dim + cfg.horizon };
        let decoder_spec = NetSpec::new(decoder_in, cfg.decoder_hidden.clone(), action_dim, HeadKind::Scalar)
            .with_batch_norm(cfg.batch_norm);
        let prior_spec = Self::prior_spec(&cfg, state_dim);
        let decoder = Net::new(decoder_spec, "decoder", rng)?;
        let prior = Net::new(prior_spec, "prior", rng)?;
        Ok(Self { cfg, state_dim, action_dim, encoder, encoder_store, decoder, prior })
    }

    /// Architecture shared by the prior, the posterior and the skill policy.
    pub fn prior_spec(cfg: &SkillModelConfig, state_dim: usize) -> NetSpec {
        NetSpec::new(state_dim, cfg.prior_hidden.clone(), cfg.z_dim, HeadKind::Gaussian).with_batch_norm(cfg.batch_norm)
    }

    fn encode(&self, batch: &WindowBatch<T>, mode: Mode) -> Result<(GaussianBatch<T>, EncoderTape<T>)> {
        match &self.encoder {
            SkillEncoder::Recurrent(enc) => {
                let seq: Vec<Matrix<T>> = (0..batch.horizon).map(|t| batch.step_input(t)).collect();
                let (g, tape) = enc.forward(&self.encoder_store, &seq)?;
                Ok((g, EncoderTape::Recurrent(tape)))
            }
            SkillEncoder::Flat(mlp) => {
                let parts: Vec<Matrix<T>> = (0..batch.horizon).map(|t| batch.step_input(t)).collect();
                let mut x = parts[0].clone();
                for p in &parts[1..] {
                    x = x.hcat(p);
                }
                let (raw, tape) = mlp.forward(&self.encoder_store, &x, mode)?;
                Ok((GaussianBatch::from_head(&raw), EncoderTape::Flat(tape)))
            }
        }
    }

    fn encoder_backward(&mut self, q: &GaussianBatch<T>, tape: &EncoderTape<T>, d_mean: &Matrix<T>, d_ls: &Matrix<T>) {
        match (&self.encoder, tape) {
            (SkillEncoder::Recurrent(enc), EncoderTape::Recurrent(t)) => {
                enc.backward(&mut self.encoder_store, q, t, d_mean, d_ls)
            }
            (SkillEncoder::Flat(mlp), EncoderTape::Flat(t)) => {
                mlp.backward(&mut self.encoder_store, t, &q.head_grad(d_mean, d_ls), true);
            }
            _ => unreachable!("tape matches encoder"),
        }
    }

    /// Gaussian over z for each window (eval mode).
    pub fn encode_windows(&self, batch: &WindowBatch<T>) -> Result<GaussianBatch<T>> {
        Ok(self.encode(batch, Mode::Eval)?.0)
    }

    /// Decoder input rows `(b, t)` for `t < H−1`.
    fn decoder_input(&self, batch: &WindowBatch<T>, z: &Matrix<T>) -> Matrix<T> {
        let steps = batch.horizon - 1;
        let zd = self.cfg.z_dim;
        let width = self.decoder.spec().input_dim;
        let mut x = Matrix::zeros(batch.size * steps, width);
        for b in 0..batch.size {
            for t in 0..steps {
                let row = x.row_mut(b * steps + t);
                if self.cfg.state_conditioned_decoder {
                    row[..self.state_dim].copy_from_slice(batch.state(b, t));
                    row[self.state_dim..].copy_from_slice(z.row(b));
                } else {
                    row[..zd].copy_from_slice(z.row(b));
                    row[zd + t] = T::one();
                }
            }
        }
        x
    }

    fn z_offset(&self) -> usize {
        if self.cfg.state_conditioned_decoder {
            self.state_dim
        } else {
            0
        }
    }

    /// Loss of one batch with standard-normal draws `eps` (`size × z_dim`) for
    /// the reparameterized latent. With `backward`, gradients accumulate into
    /// all three stores; the prior term reaches only the prior.
    pub fn loss(&mut self, batch: &WindowBatch<T>, eps: &Matrix<T>, backward: bool, update_stats: bool) -> Result<SkillLoss> {
        let n = batch.size;
        let inv_n: T = T::one() / T::from_f64_lossy(n as f64);
        let beta: T = T::from_f64_lossy(self.cfg.beta);
        let (q, etape) = self.encode(batch, Mode::Train)?;
        let std = q.log_std.map(|l| l.exp());
        let mut z = q.mean.clone();
        for ((zi, &s), &e) in z.as_mut_slice().iter_mut().zip(std.as_slice()).zip(eps.as_slice()) {
            *zi += s * e;
        }
        let x = self.decoder_input(batch, &z);
        let (pred, dtape) = self.decoder.forward(&x, Mode::Train)?;
        let steps = batch.horizon - 1;
        let mut d_pred = Matrix::zeros(pred.rows(), pred.cols());
        let mut rec = T::zero();
        for b in 0..n {
            for t in 0..steps {
                let r = b * steps + t;
                for (j, &a) in batch.action(b, t).iter().enumerate() {
                    let diff = pred.get(r, j) - a;
                    rec += diff * diff;
                    d_pred.set(r, j, (diff + diff) * inv_n);
                }
            }
        }
        rec *= inv_n;

        let zd = self.cfg.z_dim;
        let zeros = vec![T::zero(); zd];
        let mut emb = T::zero();
        for b in 0..n {
            emb += kl_terms(q.mean.row(b), q.log_std.row(b), &zeros, &zeros);
        }
        emb *= inv_n;

        let (p, ptape) = self.prior.gaussian(&batch.first_states(), Mode::Train)?;
        let mut prior_kl = T::zero();
        for b in 0..n {
            prior_kl += kl_terms(q.mean.row(b), q.log_std.row(b), p.mean.row(b), p.log_std.row(b));
        }
        prior_kl *= inv_n;
        let total = rec + beta * emb + prior_kl;

        if backward {
            let d_x = self.decoder.backward(&dtape, &d_pred, true);
            let mut d_mean = Matrix::zeros(n, zd);
            let mut d_ls = Matrix::zeros(n, zd);
            let (mut dp_mean, mut dp_ls) = (Matrix::zeros(n, zd), Matrix::zeros(n, zd));
            let off = self.z_offset();
            for b in 0..n {
                let g_emb = kl_grad(q.mean.row(b), q.log_std.row(b), &zeros, &zeros);
                let g_prior = kl_grad(q.mean.row(b), q.log_std.row(b), p.mean.row(b), p.log_std.row(b));
                for j in 0..zd {
                    let mut dz = T::zero();
                    for t in 0..steps {
                        dz += d_x.get(b * steps + t, off + j);
                    }
                    d_mean.set(b, j, dz + beta * inv_n * g_emb.d_mean_p[j]);
                    d_ls.set(b, j, dz * eps.get(b, j) * std.get(b, j) + beta * inv_n * g_emb.d_log_std_p[j]);
                    dp_mean.set(b, j, g_prior.d_mean_q[j] * inv_n);
                    dp_ls.set(b, j, g_prior.d_log_std_q[j] * inv_n);
                }
            }
            self.encoder_backward(&q, &etape, &d_mean, &d_ls);
            self.prior.gaussian_backward(&ptape, &p, &dp_mean, &dp_ls, true);
        }
        if update_stats {
            self.decoder.update_running_stats(&dtape);
            self.prior.update_running_stats(&ptape);
            if let (SkillEncoder::Flat(mlp), EncoderTape::Flat(t)) = (&self.encoder, &etape) {
                mlp.update_running_stats(&mut self.encoder_store, t);
            }
        }
        let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
        Ok(SkillLoss { reconstruction: f(rec), embedding_kl: f(emb), prior_kl: f(prior_kl), total: f(total) })
    }

    pub fn zero_grad(&mut self) {
        self.encoder_store.zero_grad();
        self.decoder.store.zero_grad();
        self.prior.store.zero_grad();
    }

    /// Skill prior at a batch of observations (eval mode).
    pub fn prior_forward(&self, obs: &Matrix<T>) -> Result<GaussianBatch<T>> {
        self.prior.predict_gaussian(obs)
    }

    /// Mean decoder actions for every `(b, t)` of `batch` given latents `z`
    /// (eval mode), flattened like `batch.actions`.
    pub fn decode_windows(&self, batch: &WindowBatch<T>, z: &Matrix<T>) -> Result<Matrix<T>> {
        self.decoder.predict(&self.decoder_input(batch, z))
    }
}

/// How the latent is chosen when measuring reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    EncoderMean,
    EncoderSample,
    StandardNormal,
}

impl SkillModel<f32> {
    /// Per-element action mean-squared error of decoding `windows`.
    pub fn reconstruction_mse(&self, windows: &[SkillWindow], source: LatentSource, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut se = 0.0;
        let mut count = 0usize;
        for chunk in windows.chunks(512) {
            let batch = WindowBatch::<f32>::new(chunk, self.state_dim, self.action_dim);
            let q = self.encode_windows(&batch)?;
            let mut z = Matrix::zeros(batch.size, self.cfg.z_dim);
            for b in 0..batch.size {
                for j in 0..self.cfg.z_dim {
                    let e: f64 = rng.sample(StandardNormal);
                    let v = match source {
                        LatentSource::EncoderMean => q.mean.get(b, j),
                        LatentSource::EncoderSample => q.mean.get(b, j) + q.log_std.get(b, j).exp() * e as f32,
                        LatentSource::StandardNormal => e as f32,
                    };
                    z.set(b, j, v);
                }
            }
            let pred = self.decode_windows(&batch, &z)?;
            for (p, a) in pred.as_slice().iter().zip(&batch.actions) {
                se += ((p - a) as f64).powi(2);
            }
            count += batch.actions.len();
        }
        Ok(se / count.max(1) as f64)
    }

    /// Mean `KL(q(window) ‖ p(s₀))` over `windows`.
    pub fn mean_prior_kl(&self, windows: &[SkillWindow]) -> Result<f64> {
        let mut acc = 0.0;
        for chunk in windows.chunks(512) {
            let batch = WindowBatch::<f32>::new(chunk, self.state_dim, self.action_dim);
            let q = self.encode_windows(&batch)?;
            let p = self.prior_forward(&batch.first_states())?;
            acc += q.kl_rows(&p)?.iter().map(|&k| k as f64).sum::<f64>();
        }
        Ok(acc / windows.len().max(1) as f64)
    }

    pub fn save(&self, ckpt: &mut Checkpoint) {
        let c = &self.cfg;
        let desc = vec![
            c.horizon as f32,
            c.z_dim as f32,
            c.state_conditioned_decoder as u8 as f32,
            matches!(c.encoder, EncoderKind::Flat) as u8 as f32,
            c.encoder_hidden as f32,
            self.state_dim as f32,
            self.action_dim as f32,
            c.batch_norm as u8 as f32,
        ];
        ckpt.insert("skills#spec", vec![desc.len()], desc);
        ckpt.set_scalar("skills#beta", c.beta);
        ckpt.put_store("skills/encoder", &self.encoder_store);
        self.decoder.save(ckpt, "skills/decoder");
        self.prior.save(ckpt, "skills/prior");
    }

    pub fn load(ckpt: &Checkpoint) -> Result<Self> {
        let d = &ckpt.get("skills#spec").map_err(|_| Error::MissingCheckpoint("skill model".into()))?.data;
        if d.len() != 8 {
            return Err(Error::DatasetFormat("bad skill model description".into()));
        }
        let decoder = Net::load(ckpt, "skills/decoder")?;
        let prior = Net::load(ckpt, "skills/prior")?;
        let cfg = SkillModelConfig {
            horizon: d[0] as usize,
            z_dim: d[1] as usize,
            state_conditioned_decoder: d[2] != 0.0,
            encoder: if d[3] != 0.0 { EncoderKind::Flat } else { EncoderKind::Lstm },
            encoder_hidden: d[4] as usize,
            beta: short_f64(ckpt.scalar("skills#beta")? as f32),
            decoder_hidden: decoder.spec().hidden.clone(),
            prior_hidden: prior.spec().hidden.clone(),
            batch_norm: d[7] != 0.0,
            ..SkillModelConfig::default()
        };
        let mut model = SkillModel::new(cfg, d[5] as usize, d[6] as usize, &mut ChaCha8Rng::seed_from_u64(0))?;
        ckpt.load_store("skills/encoder", &mut model.encoder_store)?;
        model.decoder = decoder;
        model.prior = prior;
        Ok(model)
    }

    /// Frozen low-level policy for execution.
    pub fn executor(&self) -> Result<SkillExecutor> {
        Ok(SkillExecutor {
            decoder: self.decoder.folded()?,
            closed_loop: self.cfg.state_conditioned_decoder,
            z_dim: self.cfg.z_dim,
            horizon: self.cfg.horizon,
        })
    }
}

/// Draws `size × dim` standard-normal values.
pub fn normal_matrix<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<T> {
    let data = (0..rows * cols).map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal))).collect();
    Matrix::from_vec(rows, cols, data)
}

#[derive(Debug, Clone)]
pub struct SkillTrainReport {
    pub losses: Vec<SkillLoss>,
    pub initial_val_mse: f64,
    pub final_val_mse: f64,
    pub initial_val_prior_kl: f64,
    pub final_val_prior_kl: f64,
}

/// Pretrain the skill model on a task-agnostic dataset.
///
/// A `validation_fraction` share of trajectories is held out and used to
/// report reconstruction and prior-fit before and after training.
pub fn train_skill_model(cfg: &SkillModelConfig, dataset: &Dataset, seed: u64) -> Result<(SkillModel<f32>, SkillTrainReport)> {
    cfg.validate()?;
    let (train, val) = dataset.split(cfg.validation_fraction, rng::child_seed(seed, "skills/split", 0));
    let sampler = WindowSampler::new(&train, cfg.horizon)?;
    let val_windows = match WindowSampler::new(&val, cfg.horizon) {
        Ok(s) => s.strided(&val, (s.num_windows() / 2000).max(1)),
        Err(_) => sampler.strided(&train, (sampler.num_windows() / 2000).max(1)),
    };
    let mut init_rng = rng::stream(seed, "skills/init", 0);
    let mut model = SkillModel::<f32>::new(cfg.clone(), dataset.state_dim, dataset.action_dim, &mut init_rng)?;
    let initial_val_mse = model.reconstruction_mse(&val_windows, LatentSource::EncoderMean, seed)?;
    let initial_val_prior_kl = model.mean_prior_kl(&val_windows)?;
    let opt = cfg.optimizer();
    let mut rng = rng::stream(seed, "skills/train", 0);
    let mut losses = Vec::with_capacity(cfg.train_steps);
    for step in 0..cfg.train_steps {
        let windows: Vec<SkillWindow> = (0..cfg.batch_size).map(|_| sampler.sample(&train, &mut rng)).collect();
        let batch = WindowBatch::new(&windows, train.state_dim, train.action_dim);
        let eps = normal_matrix(batch.size, cfg.z_dim, &mut rng);
        let loss = model.loss(&batch, &eps, true, true)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss { what: "skill loss".into(), step: step as u64, dump: None });
        }
        opt.step(&mut model.encoder_store);
        opt.step(&mut model.decoder.store);
        opt.step(&mut model.prior.store);
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!(
                "skills step {step}: rec {:.4} kl {:.3} prior {:.3}",
                loss.reconstruction,
                loss.embedding_kl,
                loss.prior_kl
            );
        }
        losses.push(loss);
    }
    let final_val_mse = model.reconstruction_mse(&val_windows, LatentSource::EncoderMean, seed)?;
    let final_val_prior_kl = model.mean_prior_kl(&val_windows)?;
    Ok((model, SkillTrainReport { losses, initial_val_mse, final_val_mse, initial_val_prior_kl, final_val_prior_kl }))
}

/// The frozen low-level policy: batch-norm folded, single-sample decoding.
#[derive(Debug, Clone)]
pub struct SkillExecutor {
    pub decoder: Net<f32>,
    pub closed_loop: bool,
    pub z_dim: usize,
    pub horizon: usize,
}

/// One executed macro-step.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillRollout {
    /// `(observation, action, reward)` per executed environment step.
    pub steps: Vec<([f32; 4], [f32; 2], f64)>,
    pub final_state: EnvState,
    pub done: bool,
    pub success: bool,
}

impl SkillRollout {
    pub fn reward_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.2).sum()
    }
}

impl SkillExecutor {
    /// Action for sub-step `t` of a skill. Deterministic decoding returns the
    /// mean; otherwise unit-variance Gaussian noise is added. Always clamped.
    pub fn decode_step(&self, obs: &[f32], z: &[f32], t: usize, deterministic: bool, rng: &mut impl Rng) -> [f64; 2] {
        let mut x = Vec::with_capacity(self.decoder.spec().input_dim);
        if self.closed_loop {
            x.extend_from_slice(obs);
            x.extend_from_slice(z);
        } else {
            x.extend_from_slice(z);
            let mut onehot = vec![0.0; self.horizon];
            onehot[t.min(self.horizon - 1)] = 1.0;
            x.extend(onehot);
        }
        let out = self.decoder.predict(&Matrix::from_vec(1, x.len(), x)).expect("decoder input width");
        let mut a = [out.get(0, 0) as f64, out.get(0, 1) as f64];
        if !deterministic {
            for v in &mut a {
                *v += rng.sample::<f64, _>(StandardNormal);
            }
        }
        PrimitiveAction(a).clamped()
    }

    /// Run the skill for up to `steps` environment steps, stopping early at
    /// episode end.
    pub fn execute(&self, maze: &MazeSpec, state: EnvState, z: &[f32], steps: usize) -> SkillRollout {
        let mut s = state;
        let mut out = SkillRollout { steps: Vec::with_capacity(steps), final_state: s, done: false, success: false };
        let mut dummy = ChaCha8Rng::seed_from_u64(0);
        for t in 0..steps {
            let obs = maze.observe(&s);
            let a = self.decode_step(&obs, z, t, true, &mut dummy);
            let r = maze.step(&s, PrimitiveAction(a));
            out.steps.push((obs, [a[0] as f32, a[1] as f32], r.reward));
            s = r.state;
            if r.done {
                out.done = true;
                out.success = r.success;
                break;
            }
        }
        out.final_state = s;
        out
    }
}
