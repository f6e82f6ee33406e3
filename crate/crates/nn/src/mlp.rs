use rand::Rng;

use crate::dense::Dense;
use crate::matrix::Matrix;
use crate::params::{ParamId, ParamStore};
use crate::scalar::{c, Scalar};
use crate::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu(0.2)
    }
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu(slope) => {
                if x > T::zero() {
                    x
                } else {
                    x * c(slope)
                }
            }
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::LeakyRelu(slope) => {
                if pre > T::zero() {
                    T::one()
                } else {
                    c(slope)
                }
            }
        }
    }

    fn gain(self) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => (2.0 / (1.0 + slope * slope)).sqrt(),
        }
    }
}

/// How the final linear output is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// `2·d` outputs: mean then log-std.
    Gaussian,
    Scalar,
    /// One logit passed through a sigmoid by the caller.
    SigmoidScalar,
}

/// Architecture of a feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Dimension of the modelled quantity; a Gaussian head emits twice this.
    pub output_dim: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    pub head: HeadKind,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, head: HeadKind) -> Self {
        Self { input_dim, hidden, output_dim, activation: Activation::default(), batch_norm: false, head }
    }

    /// Override the modelled output dimension (scalar heads default to 1).
    pub fn with_output(mut self, dim: usize) -> Self {
        self.output_dim = dim;
        self
    }

    pub fn with_batch_norm(mut self, on: bool) -> Self {
        self.batch_norm = on;
        self
    }

    pub fn raw_output_dim(&self) -> usize {
        match self.head {
            HeadKind::Gaussian => 2 * self.output_dim,
            HeadKind::Scalar | HeadKind::SigmoidScalar => self.output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidSpec("zero-width layer".into()));
        }
        if self.head == HeadKind::SigmoidScalar && self.output_dim != 1 {
            return Err(Error::InvalidSpec("sigmoid head has output_dim 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization.
    Train,
    /// Running statistics; output of a row is independent of the rest of the batch.
    Eval,
}

#[derive(Debug, Clone)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

#[derive(Debug, Clone)]
enum NormCache<T> {
    Train { x_hat: Matrix<T>, inv_std: Vec<T>, mean: Vec<T>, var: Vec<T> },
    Eval { x_hat: Matrix<T>, inv_std: Vec<T> },
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Matrix<T>,
    norm: Option<NormCache<T>>,
    /// Value fed to the activation.
    pre_act: Matrix<T>,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpTape<T> {
    hidden: Vec<LayerCache<T>>,
    last_input: Matrix<T>,
    batch: usize,
}

/// Multilayer perceptron: `Linear → [BatchNorm] → activation` per hidden
/// layer, then a linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: NetSpec,
    layers: Vec<Dense>,
    norms: Vec<BatchNorm>,
}

impl Mlp {
    pub fn new<T: Scalar>(spec: NetSpec, store: &mut ParamStore<T>, name: &str, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let gain = spec.activation.gain();
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut prev = spec.input_dim;
        for (i, &h) in spec.hidden.iter().enumerate() {
            layers.push(Dense::new(store, &format!("{name}.l{i}"), prev, h, gain, rng));
            if spec.batch_norm {
                norms.push(BatchNorm {
                    gamma: store.add(&format!("{name}.bn{i}.gamma"), &[h], vec![T::one(); h]),
                    beta: store.add(&format!("{name}.bn{i}.beta"), &[h], vec![T::zero(); h]),
                    running_mean: store.add_buffer(&format!("{name}.bn{i}.mean"), &[h], vec![T::zero(); h]),
                    running_var: store.add_buffer(&format!("{name}.bn{i}.var"), &[h], vec![T::one(); h]),
                });
            }
            prev = h;
        }
        let out = spec.raw_output_dim();
        layers.push(Dense::new(store, &format!("{name}.out"), prev, out, 1.0, rng));
        Ok(Self { spec, layers, norms })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn output_layer(&self) -> &Dense {
        self.layers.last().expect("at least one layer")
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, MlpTape<T>)> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::ShapeMismatch { expected: self.spec.input_dim, got: x.cols() });
        }
        let act = self.spec.activation;
        let mut hidden = Vec::with_capacity(self.spec.hidden.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers[..self.layers.len() - 1].iter().enumerate() {
            let mut pre = layer.forward(store, &cur);
            let norm = if self.spec.batch_norm {
                Some(normalize(store, &self.norms[i], &mut pre, mode))
            } else {
                None
            };
            let out = pre.map(|v| act.apply(v));
            hidden.push(LayerCache { input: cur, norm, pre_act: pre });
            cur = out;
        }
        let y = self.output_layer().forward(store, &cur);
        Ok((y, MlpTape { hidden, last_input: cur, batch: x.rows() }))
    }

    /// Forward without keeping a tape.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.forward(store, x, Mode::Eval).map(|(y, _)| y)
    }

    /// Backpropagate `d_out` through the tape. Parameter gradients are
    /// accumulated when `param_grads`; the input gradient is returned.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        tape: &MlpTape<T>,
        d_out: &Matrix<T>,
        param_grads: bool,
    ) -> Matrix<T> {
        assert_eq!(d_out.rows(), tape.batch, "backward batch size");
        let act = self.spec.activation;
        let mut d = self
            .output_layer()
            .backward(store, &tape.last_input, d_out, param_grads, true)
            .expect("dx requested");
        for i in (0..tape.hidden.len()).rev() {
            let cache = &tape.hidden[i];
            for (g, &p) in d.as_mut_slice().iter_mut().zip(cache.pre_act.as_slice()) {
                *g *= act.derivative(p);
            }
            if let Some(norm) = &cache.norm {
                d = normalize_backward(store, &self.norms[i], norm, &d, param_grads);
            }
            d = self.layers[i]
                .backward(store, &cache.input, &d, param_grads, true)
                .expect("dx requested");
        }
        d
    }

    /// Fold running-statistics batch normalization into the linear layers,
    /// producing an equivalent network without normalization (eval mode).
    pub fn fold_batch_norm<T: Scalar>(&self, store: &ParamStore<T>, rng: &mut impl Rng) -> Result<(Mlp, ParamStore<T>)> {
        let spec = NetSpec { batch_norm: false, ..self.spec.clone() };
        let mut out_store = ParamStore::new();
        let folded = Mlp::new(spec, &mut out_store, "net", rng)?;
        for (i, (src, dst)) in self.layers.iter().zip(&folded.layers).enumerate() {
            let mut w = store.value(src.w).to_vec();
            let mut b = store.value(src.b).to_vec();
            if self.spec.batch_norm && i < self.norms.len() {
                let bn = &self.norms[i];
                let (gamma, beta) = (store.value(bn.gamma), store.value(bn.beta));
                let (mean, var) = (store.value(bn.running_mean), store.value(bn.running_var));
                for j in 0..src.out_dim {
                    let s = gamma[j] / (var[j] + c(BN_EPS)).sqrt();
                    for r in 0..src.in_dim {
                        w[r * src.out_dim + j] *= s;
                    }
                    b[j] = (b[j] - mean[j]) * s + beta[j];
                }
            }
            out_store.value_mut(dst.w).copy_from_slice(&w);
            out_store.value_mut(dst.b).copy_from_slice(&b);
        }
        Ok((folded, out_store))
    }

    /// Fold batch statistics of a training pass into the running buffers.
    pub fn update_running_stats<T: Scalar>(&self, store: &mut ParamStore<T>, tape: &MlpTape<T>) {
        let m: T = c(BN_MOMENTUM);
        for (bn, cache) in self.norms.iter().zip(&tape.hidden) {
            if let Some(NormCache::Train { mean, var, .. }) = &cache.norm {
                let n = tape.batch;
                let unbias: T = if n > 1 { c(n as f64 / (n - 1) as f64) } else { T::one() };
                for (r, &bm) in store.value_mut(bn.running_mean).iter_mut().zip(mean) {
                    *r = (T::one() - m) * *r + m * bm;
                }
                for (r, &bv) in store.value_mut(bn.running_var).iter_mut().zip(var) {
                    *r = (T::one() - m) * *r + m * bv * unbias;
                }
            }
        }
    }
}

fn normalize<T: Scalar>(store: &ParamStore<T>, bn: &BatchNorm, x: &mut Matrix<T>, mode: Mode) -> NormCache<T> {
    let (rows, cols) = (x.rows(), x.cols());
    let gamma = store.value(bn.gamma);
    let beta = store.value(bn.beta);
    match mode {
        Mode::Train => {
            let n: T = c(rows as f64);
            let mut mean = vec![T::zero(); cols];
            for r in 0..rows {
                for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![T::zero(); cols];
            for r in 0..rows {
                for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n);
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + c(BN_EPS)).sqrt()).collect();
            let mut x_hat = Matrix::zeros(rows, cols);
            for r in 0..rows {
                let xr = x.row_mut(r);
                let hr = x_hat.row_mut(r);
                for j in 0..cols {
                    hr[j] = (xr[j] - mean[j]) * inv_std[j];
                    xr[j] = gamma[j] * hr[j] + beta[j];
                }
            }
            NormCache::Train { x_hat, inv_std, mean, var }
        }
        Mode::Eval => {
            let mean = store.value(bn.running_mean);
            let inv_std: Vec<T> =
                store.value(bn.running_var).iter().map(|&v| T::one() / (v + c(BN_EPS)).sqrt()).collect();
            let mut x_hat = Matrix::zeros(rows, cols);
            for r in 0..rows {
                let xr = x.row_mut(r);
                let hr = x_hat.row_mut(r);
                for j in 0..cols {
                    hr[j] = (xr[j] - mean[j]) * inv_std[j];
                    xr[j] = gamma[j] * hr[j] + beta[j];
                }
            }
            NormCache::Eval { x_hat, inv_std }
        }
    }
}

fn normalize_backward<T: Scalar>(
    store: &mut ParamStore<T>,
    bn: &BatchNorm,
    cache: &NormCache<T>,
    dy: &Matrix<T>,
    param_grads: bool,
) -> Matrix<T> {
    let (rows, cols) = (dy.rows(), dy.cols());
    let gamma = store.value(bn.gamma).to_vec();
    let x_hat = match cache {
        NormCache::Train { x_hat, .. } | NormCache::Eval { x_hat, .. } => x_hat,
    };
    let mut sum_dy = vec![T::zero(); cols];
    let mut sum_dy_xhat = vec![T::zero(); cols];
    for r in 0..rows {
        for j in 0..cols {
            sum_dy[j] += dy.get(r, j);
            sum_dy_xhat[j] += dy.get(r, j) * x_hat.get(r, j);
        }
    }
    if param_grads {
        for (g, &v) in store.grad_mut(bn.gamma).iter_mut().zip(&sum_dy_xhat) {
            *g += v;
        }
        for (g, &v) in store.grad_mut(bn.beta).iter_mut().zip(&sum_dy) {
            *g += v;
        }
    }
    let mut dx = Matrix::zeros(rows, cols);
    match cache {
        NormCache::Train { inv_std, .. } => {
            let n: T = c(rows as f64);
            for r in 0..rows {
                for j in 0..cols {
                    // dx = inv_std/N · (N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), dx̂ = dy·γ
                    let v = inv_std[j] / n
                        * gamma[j]
                        * (n * dy.get(r, j) - sum_dy[j] - x_hat.get(r, j) * sum_dy_xhat[j]);
                    dx.set(r, j, v);
                }
            }
        }
        NormCache::Eval { inv_std, .. } => {
            for r in 0..rows {
                for j in 0..cols {
                    dx.set(r, j, dy.get(r, j) * gamma[j] * inv_std[j]);
                }
            }
        }
    }
    dx
}
