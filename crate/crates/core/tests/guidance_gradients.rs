use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skild_core::guidance::{auc, bce_loss, discriminator_reward, posterior_loss};
use skild_core::nets::Net;
use skild_nn::{grad_check, GaussianBatch, HeadKind, Matrix, NetSpec, ParamStore};

const TOL: f64 = 1e-4;

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

fn check_net(net: &mut Net<f64>, mut loss: impl FnMut(&mut Net<f64>, bool) -> f64) -> f64 {
    let mut store = std::mem::take(&mut net.store);
    let report = grad_check(&mut store, 1e-5, 40, |s: &mut ParamStore<f64>, with_grad| {
        std::mem::swap(&mut net.store, s);
        net.store.zero_grad();
        let l = loss(net, with_grad);
        std::mem::swap(&mut net.store, s);
        l
    });
    net.store = store;
    assert!(report.checked > 0);
    report.max_rel_error
}

#[test]
fn discriminator_bce_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for bn in [true, false] {
        let spec = NetSpec::new(4, vec![8, 8, 8], 1, HeadKind::SigmoidScalar).with_batch_norm(bn);
        let mut net = Net::<f64>::new(spec, "disc", &mut rng).unwrap();
        let x = random_matrix(12, 4, 0.0, 1.0, &mut rng);
        let labels: Vec<f64> = (0..12).map(|i| if i < 6 { 0.95 } else { 0.05 }).collect();
        let err = check_net(&mut net, |n, g| bce_loss(n, &x, &labels, g, false).unwrap());
        assert!(err <= TOL, "bn={bn}: rel err {err}");
    }
}

#[test]
fn bce_value_matches_hand_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = NetSpec::new(3, vec![5], 1, HeadKind::SigmoidScalar).with_batch_norm(false);
    let mut net = Net::<f64>::new(spec, "disc", &mut rng).unwrap();
    let x = random_matrix(7, 3, -1.0, 1.0, &mut rng);
    let labels = [1.0, 0.0, 1.0, 0.0, 0.9, 0.1, 1.0];
    let logits = net.predict(&x).unwrap();
    let expected = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let p = 1.0 / (1.0 + (-logits.get(i, 0)).exp());
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / labels.len() as f64;
    let got = bce_loss(&mut net, &x, &labels, false, false).unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn posterior_kl_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spec = NetSpec::new(4, vec![8, 8, 8, 8, 8], 3, HeadKind::Gaussian).with_batch_norm(true);
    let mut net = Net::<f64>::new(spec, "posterior", &mut rng).unwrap();
    let s0 = random_matrix(10, 4, 0.0, 1.0, &mut rng);
    let target = GaussianBatch::from_parts(random_matrix(10, 3, -1.5, 1.5, &mut rng), random_matrix(10, 3, -2.0, 0.5, &mut rng));
    let err = check_net(&mut net, |n, g| posterior_loss(n, &s0, &target, g, false).unwrap());
    assert!(err <= TOL, "rel err {err}");
}

#[test]
fn posterior_loss_is_zero_when_it_matches_the_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let spec = NetSpec::new(4, vec![6], 2, HeadKind::Gaussian).with_batch_norm(false);
    let mut net = Net::<f64>::new(spec, "posterior", &mut rng).unwrap();
    let s0 = random_matrix(5, 4, 0.0, 1.0, &mut rng);
    let own = net.predict_gaussian(&s0).unwrap();
    let l = posterior_loss(&mut net, &s0, &own, false, false).unwrap();
    assert!(l.abs() < 1e-12, "{l}");
}

#[test]
fn auc_matches_pairwise_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        // Coarse grid so ties occur.
        let pos: Vec<f64> = (0..rng.random_range(1..30)).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
        let neg: Vec<f64> = (0..rng.random_range(1..30)).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        let oracle = wins / (pos.len() * neg.len()) as f64;
        assert!((auc(&pos, &neg) - oracle).abs() < 1e-12);
    }
}

#[test]
fn discriminator_reward_is_log_odds_with_clamp() {
    for d in [0.1f64, 0.5, 0.73, 0.999] {
        let expected = (d / (1.0 - d)).ln();
        assert!((discriminator_reward(d) - expected).abs() < 1e-12);
    }
    let lim = (1e-6f64 / (1.0 - 1e-6)).ln();
    assert!((discriminator_reward(0.0) - lim).abs() < 1e-9);
    assert!((discriminator_reward(1.0) + lim).abs() < 1e-9);
}
