//! A feed-forward network bundled with its parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skild_nn::{Activation, Checkpoint, GaussianBatch, HeadKind, Matrix, Mlp, MlpTape, Mode, NetSpec, ParamStore, Scalar};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Net<T> {
    pub mlp: Mlp,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Net<T> {
    pub fn new(spec: NetSpec, name: &str, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(spec, &mut store, name, rng)?;
        Ok(Self { mlp, store })
    }

    pub fn spec(&self) -> &NetSpec {
        self.mlp.spec()
    }

    pub fn forward(&self, x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, MlpTape<T>)> {
        Ok(self.mlp.forward(&self.store, x, mode)?)
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.mlp.predict(&self.store, x)?)
    }

    pub fn gaussian(&self, x: &Matrix<T>, mode: Mode) -> Result<(GaussianBatch<T>, MlpTape<T>)> {
        let (raw, tape) = self.forward(x, mode)?;
        Ok((GaussianBatch::from_head(&raw), tape))
    }

    pub fn predict_gaussian(&self, x: &Matrix<T>) -> Result<GaussianBatch<T>> {
        Ok(GaussianBatch::from_head(&self.predict(x)?))
    }

    pub fn backward(&mut self, tape: &MlpTape<T>, d_out: &Matrix<T>, param_grads: bool) -> Matrix<T> {
        self.mlp.backward(&mut self.store, tape, d_out, param_grads)
    }

    pub fn gaussian_backward(
        &mut self,
        tape: &MlpTape<T>,
        out: &GaussianBatch<T>,
        d_mean: &Matrix<T>,
        d_log_std: &Matrix<T>,
        param_grads: bool,
    ) -> Matrix<T> {
        let d_raw = out.head_grad(d_mean, d_log_std);
        self.backward(tape, &d_raw, param_grads)
    }

    pub fn update_running_stats(&mut self, tape: &MlpTape<T>) {
        self.mlp.update_running_stats(&mut self.store, tape);
    }

    /// Equivalent eval-mode network with batch normalization folded into the
    /// linear layers. Optimizer state is not carried over.
    pub fn folded(&self) -> Result<Self> {
        let (mlp, store) = self.mlp.fold_batch_norm(&self.store, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(Self { mlp, store })
    }

    pub fn cast<U: Scalar>(&self) -> Net<U> {
        Net { mlp: self.mlp.clone(), store: self.store.cast() }
    }

    /// Architecture under `{prefix}#spec`, arrays under `{prefix}/…`.
    pub fn save(&self, ckpt: &mut Checkpoint, prefix: &str) {
        let s = self.spec();
        let Activation::LeakyRelu(slope) = s.activation;
        let head = match s.head {
            HeadKind::Gaussian => 0.0,
            HeadKind::Scalar => 1.0,
            HeadKind::SigmoidScalar => 2.0,
        };
        let mut desc = vec![s.input_dim as f32, s.output_dim as f32, head, s.batch_norm as u8 as f32, slope as f32];
        desc.extend(s.hidden.iter().map(|&h| h as f32));
        ckpt.insert(format!("{prefix}#spec"), vec![desc.len()], desc);
        ckpt.put_store(prefix, &self.store);
    }

    pub fn load(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let d = &ckpt.get(&format!("{prefix}#spec"))?.data;
        if d.len() < 5 {
            return Err(Error::DatasetFormat(format!("bad network description for {prefix}")));
        }
        let head = match d[2] as u8 {
            0 => HeadKind::Gaussian,
            1 => HeadKind::Scalar,
            2 => HeadKind::SigmoidScalar,
            h => return Err(Error::DatasetFormat(format!("unknown head kind {h}"))),
        };
        let spec = NetSpec {
            input_dim: d[0] as usize,
            hidden: d[5..].iter().map(|&h| h as usize).collect(),
            output_dim: d[1] as usize,
            activation: Activation::LeakyRelu(short_f64(d[4])),
            batch_norm: d[3] != 0.0,
            head,
        };
        let name = ckpt
            .entries
            .keys()
            .find_map(|k| k.strip_prefix(&format!("{prefix}/")).and_then(|rest| rest.split_once(".l0.w")).map(|(n, _)| n.to_string()))
            .or_else(|| {
                ckpt.entries
                    .keys()
                    .find_map(|k| k.strip_prefix(&format!("{prefix}/")).and_then(|rest| rest.split_once(".out.w")).map(|(n, _)| n.to_string()))
            })
            .ok_or_else(|| Error::MissingCheckpoint(format!("{prefix}/*")))?;
        let mut net = Self::new(spec, &name, &mut ChaCha8Rng::seed_from_u64(0))?;
        ckpt.load_store(prefix, &mut net.store)?;
        Ok(net)
    }
}

/// The `f64` with the shortest decimal form that rounds to `x`.
pub fn short_f64(x: f32) -> f64 {
    x.to_string().parse().unwrap_or(x as f64)
}

/// Row-major batch from `f32` rows.
pub fn batch_from_rows<T: Scalar>(rows: &[&[f32]]) -> Matrix<T> {
    let cols = rows.first().map_or(0, |r| r.len());
    let data = rows.iter().flat_map(|r| r.iter().map(|&x| T::from_f64_lossy(x as f64))).collect();
    Matrix::from_vec(rows.len(), cols, data)
}

pub fn to_f32(m: &Matrix<impl Scalar>) -> Vec<f32> {
    m.as_slice().iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = NetSpec::new(4, vec![8, 8], 3, HeadKind::Gaussian).with_batch_norm(true);
        let net: Net<f32> = Net::new(spec, "prior", &mut rng).unwrap();
        let mut ck = Checkpoint::new();
        net.save(&mut ck, "skills/prior");
        let back: Net<f32> = Net::load(&ck, "skills/prior").unwrap();
        let x = Matrix::from_vec(2, 4, vec![0.1, 0.2, 0.3, 0.4, -0.5, 0.0, 1.0, 0.2]);
        assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert_eq!(back.spec(), net.spec());
    }
}
