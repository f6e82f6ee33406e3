use crate::params::ParamStore;
use crate::scalar::{c, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Rectified Adam; plain momentum SGD while the variance rectification
    /// term is undefined (first few steps).
    RAdam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip applied before the update; off when `None`.
    pub grad_clip: Option<f64>,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Self { kind: OptimizerKind::Adam, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, grad_clip: None, weight_decay: 0.0 }
    }

    pub fn radam(lr: f64) -> Self {
        Self { kind: OptimizerKind::RAdam, ..Self::adam(lr) }
    }

    /// Apply one update to every trainable entry and zero the gradients.
    pub fn step<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.step += 1;
        let t = store.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let clip_scale = match self.grad_clip {
            Some(max) => {
                let norm = store.grad_norm().to_f64().unwrap_or(f64::INFINITY);
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        // Step multiplier applied to m̂ (and whether to divide by √v̂).
        let (step_size, adaptive) = match self.kind {
            OptimizerKind::Adam => (self.lr, true),
            OptimizerKind::RAdam => {
                let rho_inf = 2.0 / (1.0 - b2) - 1.0;
                let rho_t = rho_inf - 2.0 * t as f64 * b2.powi(t) / bc2;
                if rho_t > 5.0 {
                    let r = ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt();
                    (self.lr * r, true)
                } else {
                    (self.lr, false)
                }
            }
        };
        let (b1t, b2t): (T, T) = (c(b1), c(b2));
        let (one_b1, one_b2): (T, T) = (c(1.0 - b1), c(1.0 - b2));
        let (bc1t, bc2_sqrt): (T, T) = (c(bc1), c(bc2.sqrt()));
        let (lr_t, eps, clip): (T, T, T) = (c(step_size), c(self.eps), c(clip_scale));
        let decay: T = c(self.lr * self.weight_decay);
        for e in store.entries_mut().iter_mut().filter(|e| e.trainable) {
            for i in 0..e.value.len() {
                let g = e.grad[i] * clip;
                e.first_moment[i] = b1t * e.first_moment[i] + one_b1 * g;
                e.second_moment[i] = b2t * e.second_moment[i] + one_b2 * g * g;
                let m_hat = e.first_moment[i] / bc1t;
                let upd = if adaptive {
                    let v_hat_sqrt = e.second_moment[i].sqrt() / bc2_sqrt;
                    m_hat / (v_hat_sqrt + eps)
                } else {
                    m_hat
                };
                if decay > T::zero() {
                    let v = e.value[i];
                    e.value[i] = v - decay * v;
                }
                e.value[i] -= lr_t * upd;
                e.grad[i] = T::zero();
            }
        }
    }
}

/// Adam state for a single free scalar (temperature parameters).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub t: u64,
}

impl ScalarAdam {
    /// Returns the increment to subtract from the parameter.
    pub fn delta(&mut self, opt: &Optimizer, grad: f64) -> f64 {
        self.t += 1;
        let t = self.t as i32;
        self.m = opt.beta1 * self.m + (1.0 - opt.beta1) * grad;
        self.v = opt.beta2 * self.v + (1.0 - opt.beta2) * grad * grad;
        let m_hat = self.m / (1.0 - opt.beta1.powi(t));
        let v_hat = self.v / (1.0 - opt.beta2.powi(t));
        opt.lr * m_hat / (v_hat.sqrt() + opt.eps)
    }
}
