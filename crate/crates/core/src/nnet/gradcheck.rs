//! Central finite-difference gradient checking.
//!
//! The closure computes a scalar loss; when handed a `Grads` buffer it must
//! also run the analytic backward pass. The checker then perturbs every
//! parameter element and reports the worst relative error.

use super::params::{Grads, ParamSet};

pub const FD_STEP: f64 = 1e-4;

/// Max relative error between analytic and central-difference gradients
/// over every element of every parameter.
pub fn check_param_gradients(
    ps: &mut ParamSet,
    mut f: impl FnMut(&ParamSet, Option<&mut Grads>) -> f64,
) -> f64 {
    let mut grads = Grads::zeros_like(ps);
    let _ = f(ps, Some(&mut grads));
    let mut worst: f64 = 0.0;
    for p in 0..ps.len() {
        let n = ps.value(super::params::ParamId::from_index(p)).len();
        for i in 0..n {
            let id = super::params::ParamId::from_index(p);
            let orig = ps.value(id).data[i];
            ps.value_mut(id).data[i] = orig + FD_STEP;
            let lp = f(ps, None);
            ps.value_mut(id).data[i] = orig - FD_STEP;
            let lm = f(ps, None);
            ps.value_mut(id).data[i] = orig;
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let g = grads.get(id).data[i];
            let rel = (fd - g).abs() / (fd.abs() + g.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Central finite difference of a scalar function along coordinate `i`.
pub fn numeric_partial(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}
