use crate::params::ParamStore;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

const KINK_RETRY: f64 = 1e-6;

/// Relative error with an absolute floor so that coordinates whose
/// gradient is numerically zero do not divide by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Check `loss` against its analytic gradient.
///
/// `loss(store, with_grad)` must return the scalar loss and, when
/// `with_grad`, accumulate `∂loss/∂param` into the store's gradient buffers.
/// Coordinates that disagree are probed again with `eps / 100` and keep the
/// smaller error, so a kink next to the probe point is not reported as a
/// wrong gradient. At most `max_per_entry` coordinates are probed per entry
/// (evenly strided).
pub fn grad_check<F>(store: &mut ParamStore<f64>, eps: f64, max_per_entry: usize, mut loss: F) -> GradCheckReport
where
    F: FnMut(&mut ParamStore<f64>, bool) -> f64,
{
    store.zero_grad();
    loss(store, true);
    let analytic: Vec<Vec<f64>> = store.entries().iter().map(|e| e.grad.clone()).collect();
    store.zero_grad();

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let stride = n.div_ceil(max_per_entry.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let mut central = |h: f64| {
                let orig = store.value(id)[i];
                store.value_mut(id)[i] = orig + h;
                let plus = loss(store, false);
                store.value_mut(id)[i] = orig - h;
                let minus = loss(store, false);
                store.value_mut(id)[i] = orig;
                (plus - minus) / (2.0 * h)
            };
            let mut err = relative_error(analytic[id.0][i], central(eps));
            if err > KINK_RETRY {
                // A leaky-ReLU kink inside [x - eps, x + eps] spoils the
                // central difference; a much smaller step usually clears it.
                err = err.min(relative_error(analytic[id.0][i], central(eps * 1e-2)));
            }
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                if err >= report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some((store.entry(id).name.clone(), i));
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", &[3], vec![0.5, -1.0, 2.0]);
        let coef = [3.0, -0.25, 1.5];
        let report = grad_check(&mut s, 1e-4, 10, |st, with_grad| {
            let w = st.value(id).to_vec();
            if with_grad {
                st.grad_mut(id).copy_from_slice(&coef);
            }
            w.iter().zip(&coef).map(|(a, b)| a * b).sum()
        });
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error <= 1e-8, "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", &[1], vec![1.0]);
        let report = grad_check(&mut s, 1e-4, 10, |st, with_grad| {
            let w = st.value(id)[0];
            if with_grad {
                st.grad_mut(id)[0] = 3.0 * w; // true derivative of w² is 2w
            }
            w * w
        });
        assert!(report.max_rel_error > 0.1);
    }

    #[test]
    fn kink_next_to_the_probe_point_is_tolerated() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", &[1], vec![3e-6]);
        let leaky = |w: f64| if w > 0.0 { w } else { 0.01 * w };
        let report = grad_check(&mut s, 1e-5, 10, |st, with_grad| {
            let w = st.value(id)[0];
            if with_grad {
                st.grad_mut(id)[0] = 1.0;
            }
            leaky(w)
        });
        assert!(report.max_rel_error <= 1e-8, "{report:?}");
    }
}
