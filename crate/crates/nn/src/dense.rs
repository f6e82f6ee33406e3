use rand::Rng;

use crate::matrix::Matrix;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Affine layer `y = x·W + b`, with `W` stored row-major as `in × out`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    /// Kaiming-uniform weights scaled by `gain`; bias `U(±1/√fan_in)`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_dim.max(1) as f64;
        let w = store.add_uniform(&format!("{name}.w"), &[in_dim, out_dim], gain * (3.0 / fan_in).sqrt(), rng);
        let b = store.add_uniform(&format!("{name}.b"), &[out_dim], 1.0 / fan_in.sqrt(), rng);
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Matrix<T>) -> Matrix<T> {
        assert_eq!(x.cols(), self.in_dim, "dense input width");
        let mut out = Matrix::zeros(x.rows(), self.out_dim);
        let bias = store.value(self.b);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(bias);
        }
        T::gemm(
            x.rows(),
            self.in_dim,
            self.out_dim,
            T::one(),
            x.as_slice(),
            self.in_dim as isize,
            1,
            store.value(self.w),
            self.out_dim as isize,
            1,
            T::one(),
            out.as_mut_slice(),
            self.out_dim as isize,
            1,
        );
        out
    }

    /// Accumulates `dW`, `db` (when `param_grads`) and returns `dx`.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        x: &Matrix<T>,
        dy: &Matrix<T>,
        param_grads: bool,
        need_dx: bool,
    ) -> Option<Matrix<T>> {
        assert_eq!(dy.cols(), self.out_dim);
        if param_grads {
            x.t_matmul_into(dy, store.grad_mut(self.w), T::one());
            let db = store.grad_mut(self.b);
            for r in 0..dy.rows() {
                for (g, &d) in db.iter_mut().zip(dy.row(r)) {
                    *g += d;
                }
            }
        }
        need_dx.then(|| dy.matmul_t_raw(store.value(self.w), self.in_dim))
    }
}
