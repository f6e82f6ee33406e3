use rand::Rng;

use crate::dense::Dense;
use crate::gaussian::GaussianBatch;
use crate::lstm::{Lstm, LstmTape};
use crate::matrix::Matrix;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::Result;

/// Recurrent sequence encoder: LSTM over the time steps, final hidden state
/// mapped to a diagonal Gaussian by a linear head.
#[derive(Debug, Clone)]
pub struct RnnEncoder {
    pub lstm: Lstm,
    pub head: Dense,
    pub latent_dim: usize,
}

#[derive(Debug, Clone)]
pub struct RnnEncoderTape<T> {
    lstm: LstmTape<T>,
    final_h: Matrix<T>,
}

impl RnnEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let lstm = Lstm::new(store, &format!("{name}.lstm"), input_dim, hidden_dim, rng);
        let head = Dense::new(store, &format!("{name}.head"), hidden_dim, 2 * latent_dim, 1.0, rng);
        Self { lstm, head, latent_dim }
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim
    }

    /// `seq[t]` holds the batch's inputs at time `t`.
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, seq: &[Matrix<T>]) -> Result<(GaussianBatch<T>, RnnEncoderTape<T>)> {
        let (h, tape) = self.lstm.forward(store, seq)?;
        let raw = self.head.forward(store, &h);
        Ok((GaussianBatch::from_head(&raw), RnnEncoderTape { lstm: tape, final_h: h }))
    }

    /// Backpropagate gradients on the Gaussian's mean and log-std.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        out: &GaussianBatch<T>,
        tape: &RnnEncoderTape<T>,
        d_mean: &Matrix<T>,
        d_log_std: &Matrix<T>,
    ) {
        let d_raw = out.head_grad(d_mean, d_log_std);
        let dh = self.head.backward(store, &tape.final_h, &d_raw, true, true).expect("dx requested");
        self.lstm.backward(store, &tape.lstm, &dh, true);
    }
}
