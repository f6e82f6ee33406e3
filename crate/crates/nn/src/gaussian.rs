use rand::Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;
use crate::scalar::{c, Scalar};
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
fn clamp_log_std<T: Scalar>(x: T) -> T {
    x.max(c(LOG_STD_MIN)).min(c(LOG_STD_MAX))
}

/// Diagonal Gaussian; `log_std` is clamped to `[-10, 2]` on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian<T> {
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
}

impl<T: Scalar> DiagGaussian<T> {
    pub fn new(mean: Vec<T>, log_std: Vec<T>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::DimMismatch { left: mean.len(), right: log_std.len() });
        }
        let log_std = log_std.into_iter().map(clamp_log_std).collect();
        Ok(Self { mean, log_std })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![T::zero(); dim], log_std: vec![T::zero(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<T> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.log_std).all(|x| x.is_finite())
    }

    /// `KL(self ‖ other)` in closed form.
    pub fn kl(&self, other: &DiagGaussian<T>) -> Result<T> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(kl_terms(&self.mean, &self.log_std, &other.mean, &other.log_std))
    }

    pub fn log_prob(&self, z: &[T]) -> T {
        let half: T = c(0.5);
        let mut lp = -half * c::<T>(LN_2PI) * c(self.dim() as f64);
        for ((&zi, &m), &ls) in z.iter().zip(&self.mean).zip(&self.log_std) {
            let e = (zi - m) / ls.exp();
            lp -= ls + half * e * e;
        }
        lp
    }

    /// Reparameterized draw `z = μ + σ⊙ε`; returns `(z, log_prob, ε)`.
    pub fn sample_reparam(&self, rng: &mut impl Rng) -> (Vec<T>, T, Vec<T>) {
        let eps: Vec<T> = (0..self.dim()).map(|_| c(rng.sample::<f64, _>(StandardNormal))).collect();
        let z: Vec<T> = self
            .mean
            .iter()
            .zip(&self.log_std)
            .zip(&eps)
            .map(|((&m, &ls), &e)| m + ls.exp() * e)
            .collect();
        let lp = self.log_prob(&z);
        (z, lp, eps)
    }
}

/// `Σ_i log(σq/σp) + (σp² + (μp−μq)²)/(2σq²) − ½`.
pub fn kl_terms<T: Scalar>(mp: &[T], lsp: &[T], mq: &[T], lsq: &[T]) -> T {
    let half: T = c(0.5);
    let mut acc = T::zero();
    for i in 0..mp.len() {
        let vp = (lsp[i] + lsp[i]).exp();
        let vq = (lsq[i] + lsq[i]).exp();
        let d = mp[i] - mq[i];
        acc += lsq[i] - lsp[i] + (vp + d * d) / (vq + vq) - half;
    }
    acc
}

/// Gradients of `KL(p ‖ q)` with respect to each argument's mean and log-std.
#[derive(Debug, Clone)]
pub struct KlGrad<T> {
    pub d_mean_p: Vec<T>,
    pub d_log_std_p: Vec<T>,
    pub d_mean_q: Vec<T>,
    pub d_log_std_q: Vec<T>,
}

pub fn kl_grad<T: Scalar>(mp: &[T], lsp: &[T], mq: &[T], lsq: &[T]) -> KlGrad<T> {
    let n = mp.len();
    let mut g = KlGrad {
        d_mean_p: vec![T::zero(); n],
        d_log_std_p: vec![T::zero(); n],
        d_mean_q: vec![T::zero(); n],
        d_log_std_q: vec![T::zero(); n],
    };
    for i in 0..n {
        let vp = (lsp[i] + lsp[i]).exp();
        let vq = (lsq[i] + lsq[i]).exp();
        let d = mp[i] - mq[i];
        g.d_mean_p[i] = d / vq;
        g.d_mean_q[i] = -d / vq;
        g.d_log_std_p[i] = vp / vq - T::one();
        g.d_log_std_q[i] = T::one() - (vp + d * d) / vq;
    }
    g
}

/// A batch of diagonal Gaussians read from a network head emitting
/// `[mean | log_std]` per row.
#[derive(Debug, Clone)]
pub struct GaussianBatch<T> {
    pub mean: Matrix<T>,
    pub log_std: Matrix<T>,
    /// Rows/cols where the raw log-std was outside the clamp range (zero gradient).
    clamped: Vec<bool>,
}

impl<T: Scalar> GaussianBatch<T> {
    pub fn from_head(raw: &Matrix<T>) -> Self {
        assert!(raw.cols() % 2 == 0, "Gaussian head needs an even width");
        let d = raw.cols() / 2;
        let mean = raw.col_slice(0, d);
        let raw_ls = raw.col_slice(d, 2 * d);
        let clamped = raw_ls.as_slice().iter().map(|&x| x < c(LOG_STD_MIN) || x > c(LOG_STD_MAX)).collect();
        let log_std = raw_ls.map(clamp_log_std);
        Self { mean, log_std, clamped }
    }

    pub fn from_parts(mean: Matrix<T>, log_std: Matrix<T>) -> Self {
        let clamped = vec![false; log_std.as_slice().len()];
        Self { mean, log_std: log_std.map(clamp_log_std), clamped }
    }

    pub fn rows(&self) -> usize {
        self.mean.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }

    pub fn row(&self, r: usize) -> DiagGaussian<T> {
        DiagGaussian { mean: self.mean.row(r).to_vec(), log_std: self.log_std.row(r).to_vec() }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        let clamped = idx.iter().flat_map(|&i| self.clamped[i * d..(i + 1) * d].iter().copied()).collect();
        Self { mean: self.mean.select_rows(idx), log_std: self.log_std.select_rows(idx), clamped }
    }

    /// Per-row `KL(self_r ‖ other_r)`.
    pub fn kl_rows(&self, other: &GaussianBatch<T>) -> Result<Vec<T>> {
        if self.dim() != other.dim() || self.rows() != other.rows() {
            return Err(Error::DimMismatch { left: self.dim(), right: other.dim() });
        }
        Ok((0..self.rows())
            .map(|r| kl_terms(self.mean.row(r), self.log_std.row(r), other.mean.row(r), other.log_std.row(r)))
            .collect())
    }

    /// Map gradients on (mean, log_std) back to the raw head output.
    pub fn head_grad(&self, d_mean: &Matrix<T>, d_log_std: &Matrix<T>) -> Matrix<T> {
        let mut dls = d_log_std.clone();
        for (g, &cl) in dls.as_mut_slice().iter_mut().zip(&self.clamped) {
            if cl {
                *g = T::zero();
            }
        }
        d_mean.hcat(&dls)
    }
}

/// `scale·tanh(x/scale)`: strictly inside `(−scale, scale)`, unit slope at 0.
#[inline]
pub fn tanh_squash<T: Scalar>(x: T, scale: T) -> T {
    scale * (x / scale).tanh()
}

/// `d/dx scale·tanh(x/scale)`.
#[inline]
pub fn tanh_squash_grad<T: Scalar>(x: T, scale: T) -> T {
    let t = (x / scale).tanh();
    T::one() - t * t
}

/// Log-density of `scale·tanh(u/scale)` given the log-density of `u`.
pub fn squashed_log_prob<T: Scalar>(base_log_prob: T, u: &[T], scale: T) -> T {
    let eps: T = c(1e-6);
    base_log_prob - u.iter().map(|&x| (tanh_squash_grad(x, scale) + eps).ln()).sum::<T>()
}

/// `∂/∂u_i` of the squash correction `−Σ log(1 − tanh²(u/scale))`.
#[inline]
pub fn squash_correction_grad<T: Scalar>(u: T, scale: T) -> T {
    let t = (u / scale).tanh();
    (t + t) / scale
}
