//! Central finite-difference gradient verification.

use crate::scalar::Scalar;

/// `|a - f| / max(1e-8, |a| + |f|)`.
pub fn relative_error<S: Scalar>(analytic: S, numeric: S) -> S {
    (analytic - numeric).abs() / S::lit(1e-8).max(analytic.abs() + numeric.abs())
}

/// Compares the analytic gradient returned by `loss_grad` at `params` with
/// central differences of its loss, coordinate by coordinate, and returns the
/// largest relative error.
pub fn grad_check<S: Scalar>(mut loss_grad: impl FnMut(&[S]) -> (S, Vec<S>), params: &[S], epsilon: S) -> S {
    let (_, analytic) = loss_grad(params);
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let mut x = params.to_vec();
    let mut worst = S::zero();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let (up, _) = loss_grad(&x);
        x[i] = orig - epsilon;
        let (down, _) = loss_grad(&x);
        x[i] = orig;
        let numeric = (up - down) / (epsilon + epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
