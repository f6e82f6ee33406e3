use rand::Rng;

use crate::matrix::Matrix;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::{Error, Result};

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Single-layer recurrent cell with input, forget, cell and output gates
/// (gate blocks laid out in that order along the `4·hidden` axis).
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone)]
struct StepCache<T> {
    x: Matrix<T>,
    h_prev: Matrix<T>,
    c_prev: Matrix<T>,
    /// Post-nonlinearity gates, `B × 4h`.
    gates: Matrix<T>,
    tanh_c: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct LstmTape<T> {
    steps: Vec<StepCache<T>>,
}

impl Lstm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let w_x = store.add_uniform(&format!("{name}.w_x"), &[input_dim, 4 * hidden_dim], bound, rng);
        let w_h = store.add_uniform(&format!("{name}.w_h"), &[hidden_dim, 4 * hidden_dim], bound, rng);
        let b = store.add_uniform(&format!("{name}.b"), &[4 * hidden_dim], bound, rng);
        Self { w_x, w_h, b, input_dim, hidden_dim }
    }

    /// Run over `seq` (one `B × input_dim` matrix per time step) from zero
    /// state; returns the final hidden state.
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, seq: &[Matrix<T>]) -> Result<(Matrix<T>, LstmTape<T>)> {
        let first = seq.first().ok_or(Error::EmptySequence)?;
        let batch = first.rows();
        let hd = self.hidden_dim;
        let mut h = Matrix::zeros(batch, hd);
        let mut cell = Matrix::zeros(batch, hd);
        let mut steps = Vec::with_capacity(seq.len());
        let bias = store.value(self.b);
        for x in seq {
            if x.cols() != self.input_dim || x.rows() != batch {
                return Err(Error::ShapeMismatch { expected: self.input_dim, got: x.cols() });
            }
            let mut pre = Matrix::zeros(batch, 4 * hd);
            for r in 0..batch {
                pre.row_mut(r).copy_from_slice(bias);
            }
            T::gemm(batch, self.input_dim, 4 * hd, T::one(), x.as_slice(), self.input_dim as isize, 1,
                store.value(self.w_x), (4 * hd) as isize, 1, T::one(), pre.as_mut_slice(), (4 * hd) as isize, 1);
            T::gemm(batch, hd, 4 * hd, T::one(), h.as_slice(), hd as isize, 1,
                store.value(self.w_h), (4 * hd) as isize, 1, T::one(), pre.as_mut_slice(), (4 * hd) as isize, 1);
            let mut next_c = Matrix::zeros(batch, hd);
            let mut next_h = Matrix::zeros(batch, hd);
            let mut tanh_c = Matrix::zeros(batch, hd);
            for r in 0..batch {
                let g = pre.row_mut(r);
                for j in 0..hd {
                    g[j] = sigmoid(g[j]);
                    g[hd + j] = sigmoid(g[hd + j]);
                    g[2 * hd + j] = g[2 * hd + j].tanh();
                    g[3 * hd + j] = sigmoid(g[3 * hd + j]);
                }
                let g = pre.row(r);
                for j in 0..hd {
                    let cv = g[hd + j] * cell.get(r, j) + g[j] * g[2 * hd + j];
                    let tc = cv.tanh();
                    next_c.set(r, j, cv);
                    tanh_c.set(r, j, tc);
                    next_h.set(r, j, g[3 * hd + j] * tc);
                }
            }
            steps.push(StepCache { x: x.clone(), h_prev: h, c_prev: cell, gates: pre, tanh_c });
            h = next_h;
            cell = next_c;
        }
        Ok((h, LstmTape { steps }))
    }

    /// Backpropagation through time from a gradient on the final hidden state.
    /// Returns per-step input gradients.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        tape: &LstmTape<T>,
        d_h_final: &Matrix<T>,
        param_grads: bool,
    ) -> Vec<Matrix<T>> {
        let hd = self.hidden_dim;
        let batch = d_h_final.rows();
        let mut dh = d_h_final.clone();
        let mut dc: Matrix<T> = Matrix::zeros(batch, hd);
        let mut dxs = vec![Matrix::zeros(0, 0); tape.steps.len()];
        for (t, st) in tape.steps.iter().enumerate().rev() {
            let mut da = Matrix::zeros(batch, 4 * hd);
            let mut dc_prev = Matrix::zeros(batch, hd);
            for r in 0..batch {
                let g = st.gates.row(r);
                let out = da.row_mut(r);
                for j in 0..hd {
                    let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                    let tc = st.tanh_c.get(r, j);
                    let dhv = dh.get(r, j);
                    let d_o = dhv * tc;
                    let dcv = dc.get(r, j) + dhv * o * (T::one() - tc * tc);
                    let di = dcv * gg;
                    let dg = dcv * i;
                    let df = dcv * st.c_prev.get(r, j);
                    dc_prev.set(r, j, dcv * f);
                    out[j] = di * i * (T::one() - i);
                    out[hd + j] = df * f * (T::one() - f);
                    out[2 * hd + j] = dg * (T::one() - gg * gg);
                    out[3 * hd + j] = d_o * o * (T::one() - o);
                }
            }
            if param_grads {
                st.x.t_matmul_into(&da, store.grad_mut(self.w_x), T::one());
                st.h_prev.t_matmul_into(&da, store.grad_mut(self.w_h), T::one());
                let db = store.grad_mut(self.b);
                for r in 0..batch {
                    for (g, &v) in db.iter_mut().zip(da.row(r)) {
                        *g += v;
                    }
                }
            }
            dh = da.matmul_t_raw(store.value(self.w_h), hd);
            dxs[t] = da.matmul_t_raw(store.value(self.w_x), self.input_dim);
            dc = dc_prev;
        }
        dxs
    }
}
