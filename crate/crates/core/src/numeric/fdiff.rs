//! Central finite differences — the reference every analytic gradient in
//! this crate is checked against.

use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-6;

/// Central-difference gradient of `f` at `theta`:
/// `g_i = (f(theta + eps e_i) - f(theta - eps e_i)) / (2 eps)`.
///
/// `f` is called twice per coordinate, so this is only for verification at
/// toy sizes, never for training.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    let mut work = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let up = f(&work)?;
        work[i] = orig - eps;
        let down = f(&work)?;
        work[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Worst-case per-coordinate relative error between two gradients, with the
/// denominator floored at 1e-8 so near-zero coordinates compare absolutely.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let denom = x.abs().max(y.abs()).max(1e-8);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}
