//! Central finite differences, kept independent of the analytic code they
//! are used to check.

use nalgebra::DMatrix;

/// Step for gradient estimates.
pub const GRAD_STEP: f64 = 1e-5;
/// Step for Hessian estimates.
pub const HESSIAN_STEP: f64 = 1e-4;

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian of a vector field, symmetrized. Meant for
/// gradient fields, whose Jacobian is a Hessian.
pub fn symmetric_jacobian(g: impl Fn(&[f64]) -> Vec<f64>, point: &[f64], h: f64) -> DMatrix<f64> {
    let n = point.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut x = point.to_vec();
    for j in 0..n {
        let orig = x[j];
        x[j] = orig + h;
        let up = g(&x);
        x[j] = orig - h;
        let down = g(&x);
        x[j] = orig;
        for i in 0..n {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    (&jac + jac.transpose()) * 0.5
}

/// Hessian of a scalar function as the symmetrized Jacobian of its
/// finite-difference gradient.
pub fn finite_diff_hessian(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> DMatrix<f64> {
    symmetric_jacobian(|x| finite_diff_grad(&f, x, h), point, h)
}

/// `|a − b| / max(|a|, |b|, floor)`
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest coordinate-wise [`rel_err`].
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "vectors differ in length");
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y, floor)).fold(0.0, f64::max)
}
