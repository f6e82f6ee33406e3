//! Reverse-mode gradients against central finite differences, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skild_nn::{
    grad_check, kl_grad, GaussianBatch, HeadKind, Matrix, Mlp, Mode, NetSpec, ParamStore, RnnEncoder,
};

const TOL: f64 = 1e-4;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect())
}

/// Σ w ⊙ y for a fixed random `w`: a scalar with a non-trivial gradient.
fn weighted_sum(y: &Matrix<f64>, w: &Matrix<f64>) -> f64 {
    y.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

#[test]
fn mlp_with_batch_norm_in_training_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let net = Mlp::new(NetSpec::new(4, vec![8, 8], 2, HeadKind::Gaussian).with_batch_norm(true), &mut store, "n", &mut rng)
        .unwrap();
    let x = random_matrix(&mut rng, 6, 4);
    let w = random_matrix(&mut rng, 6, 4);
    let report = grad_check(&mut store, 1e-5, 40, |st, with_grad| {
        let (y, tape) = net.forward(st, &x, Mode::Train).unwrap();
        if with_grad {
            net.backward(st, &tape, &w, true);
        }
        weighted_sum(&y, &w)
    });
    assert!(report.max_rel_error <= TOL, "{report:?}");
}

#[test]
fn mlp_input_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let net = Mlp::new(NetSpec::new(3, vec![6, 6], 1, HeadKind::Scalar), &mut store, "q", &mut rng).unwrap();
    let x = random_matrix(&mut rng, 4, 3);
    let w = random_matrix(&mut rng, 4, 1);
    let (_, tape) = net.forward(&store, &x, Mode::Eval).unwrap();
    let dx = net.backward(&mut store, &tape, &w, false);
    assert!(store.grads_all_zero(), "input-only backward must not touch parameter grads");
    let h = 1e-6;
    for r in 0..4 {
        for cidx in 0..3 {
            let mut xp = x.clone();
            xp.set(r, cidx, x.get(r, cidx) + h);
            let mut xm = x.clone();
            xm.set(r, cidx, x.get(r, cidx) - h);
            let fd = (weighted_sum(&net.predict(&store, &xp).unwrap(), &w)
                - weighted_sum(&net.predict(&store, &xm).unwrap(), &w))
                / (2.0 * h);
            assert!(skild_nn::relative_error(dx.get(r, cidx), fd) <= TOL);
        }
    }
}

fn random_sequence(rng: &mut ChaCha8Rng, steps: usize, batch: usize, dim: usize) -> Vec<Matrix<f64>> {
    (0..steps).map(|_| random_matrix(rng, batch, dim)).collect()
}

#[test]
fn recurrent_encoder_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let enc = RnnEncoder::new(&mut store, "enc", 3, 5, 2, &mut rng);
    let seq = random_sequence(&mut rng, 4, 3, 3);
    let wm = random_matrix(&mut rng, 3, 2);
    let wl = random_matrix(&mut rng, 3, 2);
    let report = grad_check(&mut store, 1e-5, 200, |st, with_grad| {
        let (g, tape) = enc.forward(st, &seq).unwrap();
        if with_grad {
            enc.backward(st, &g, &tape, &wm, &wl);
        }
        weighted_sum(&g.mean, &wm) + weighted_sum(&g.log_std, &wl)
    });
    assert!(report.max_rel_error <= TOL, "{report:?}");
    assert!(report.checked > 100);
}

#[test]
fn encoder_is_order_sensitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let enc = RnnEncoder::new(&mut store, "enc", 3, 8, 2, &mut rng);
    let seq = random_sequence(&mut rng, 5, 1, 3);
    let mut rev = seq.clone();
    rev.reverse();
    let (a, _) = enc.forward(&store, &seq).unwrap();
    let (b, _) = enc.forward(&store, &rev).unwrap();
    assert_ne!(a.mean, b.mean);
}

#[test]
fn zero_recurrent_net_outputs_head_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let enc = RnnEncoder::new(&mut store, "enc", 3, 4, 2, &mut rng);
    for id in [enc.lstm.w_x, enc.lstm.w_h, enc.lstm.b] {
        store.value_mut(id).fill(0.0);
    }
    let seq = vec![Matrix::zeros(1, 3); 6];
    let (g, _) = enc.forward(&store, &seq).unwrap();
    let bias = store.value(enc.head.b);
    assert_eq!(g.mean.as_slice(), &bias[..2]);
}

#[test]
fn gaussian_head_kl_loss() {
    // KL(net(x) ‖ fixed q) summed over the batch, through the head clamp.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::<f64>::new();
    let net = Mlp::new(NetSpec::new(3, vec![7], 2, HeadKind::Gaussian), &mut store, "g", &mut rng).unwrap();
    let x = random_matrix(&mut rng, 5, 3);
    let q = GaussianBatch::from_parts(random_matrix(&mut rng, 5, 2), random_matrix(&mut rng, 5, 2).map(|v| v * 0.5));
    let report = grad_check(&mut store, 1e-5, 50, |st, with_grad| {
        let (raw, tape) = net.forward(st, &x, Mode::Train).unwrap();
        let p = GaussianBatch::from_head(&raw);
        let kl: f64 = p.kl_rows(&q).unwrap().iter().sum();
        if with_grad {
            let mut dm = Matrix::zeros(5, 2);
            let mut dl = Matrix::zeros(5, 2);
            for r in 0..5 {
                let g = kl_grad(p.mean.row(r), p.log_std.row(r), q.mean.row(r), q.log_std.row(r));
                dm.row_mut(r).copy_from_slice(&g.d_mean_p);
                dl.row_mut(r).copy_from_slice(&g.d_log_std_p);
            }
            net.backward(st, &tape, &p.head_grad(&dm, &dl), true);
        }
        kl
    });
    assert!(report.max_rel_error <= TOL, "{report:?}");
}
