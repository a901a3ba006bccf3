//! Brute-force implicit SGD and the damped Newton step it is compared to.

use nalgebra::{DMatrix, DVector};

use super::fd::{finite_diff_grad, symmetric_jacobian, GRAD_STEP, HESSIAN_STEP};
use crate::error::{PcError, Result};
use crate::math::Batch;
use crate::optim::{bp_grads, GradSet};
use crate::pcn::{Network, Params};

/// Iteration cap of the inner solver.
pub const ORACLE_MAX_ITERS: usize = 50_000;
const STALL_LIMIT: usize = 500;

fn require_single_sample(x: &Batch, what: &'static str) -> Result<()> {
    if x.rows() != 1 {
        return Err(PcError::BatchSizeOne { what, got: x.rows() });
    }
    Ok(())
}

fn flat_loss<'a>(net: &'a Network, x: &Batch, y: &Batch) -> impl Fn(&[f64]) -> f64 + 'a {
    let x = x.clone();
    let y = y.clone();
    move |theta: &[f64]| {
        let params = net.params.unflatten_like(theta).expect("length preserved");
        net.with_params(params).and_then(|n| n.loss(&x, &y)).unwrap_or(f64::NAN)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `argmin_θ 𝓛(θ) + ‖θ − θ_old‖²/2β` for a single sample, solved by
/// gradient descent with Barzilai–Borwein steps capped at `β` and halved
/// whenever the objective rises. The loss gradient comes from central
/// differences, so the oracle shares no code with backpropagation. Stops
/// once the objective's gradient norm is below `tol`.
pub fn implicit_sgd_oracle(net: &Network, x: &Batch, y: &Batch, beta: f64, tol: f64) -> Result<Params> {
    require_single_sample(x, "the implicit SGD oracle")?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(PcError::InvalidConfig(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    let theta0 = net.params.flatten();
    let loss = flat_loss(net, x, y);
    let objective = |t: &[f64]| {
        let reg: f64 = t.iter().zip(&theta0).map(|(a, b)| (a - b) * (a - b)).sum();
        loss(t) + reg / (2.0 * beta)
    };
    let gradient = |t: &[f64]| {
        let mut g = finite_diff_grad(&loss, t, GRAD_STEP);
        for ((gi, ti), t0) in g.iter_mut().zip(t).zip(&theta0) {
            *gi += (ti - t0) / beta;
        }
        g
    };

    let mut theta = theta0.clone();
    let mut value = objective(&theta);
    let mut grad = gradient(&theta);
    let mut step = beta;
    let (mut best, mut since_best) = (f64::INFINITY, 0);
    for iter in 0..ORACLE_MAX_ITERS {
        let norm = dot(&grad, &grad).sqrt();
        if norm < tol {
            return net.params.unflatten_like(&theta);
        }
        // Finite-difference noise puts a floor under the gradient norm; give
        // up once progress has stalled well above `tol`.
        if norm < 0.9 * best {
            (best, since_best) = (norm, 0);
        } else {
            since_best += 1;
            if since_best > STALL_LIMIT {
                return Err(PcError::NotConverged {
                    iterations: iter,
                    grad_norm: best,
                });
            }
        }
        let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
        let cand_value = objective(&cand);
        if !(cand_value <= value + 1e-13 * (1.0 + value.abs())) {
            step *= 0.5;
            if step < 1e-12 * beta {
                break;
            }
            continue;
        }
        let cand_grad = gradient(&cand);
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let d: Vec<f64> = cand_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let curv = dot(&s, &d);
        step = if curv > 0.0 {
            (dot(&s, &s) / curv).clamp(1e-4 * beta, beta)
        } else {
            beta
        };
        theta = cand;
        value = cand_value;
        grad = cand_grad;
    }
    Err(PcError::NotConverged {
        iterations: ORACLE_MAX_ITERS,
        grad_norm: dot(&grad, &grad).sqrt(),
    })
}

/// `−(I + βH)^{-1} β g`
pub fn damped_newton_step(g: &[f64], hessian: &DMatrix<f64>, beta: f64) -> Result<Vec<f64>> {
    let n = g.len();
    let system = DMatrix::identity(n, n) + hessian * beta;
    let rhs = DVector::from_iterator(n, g.iter().map(|v| -beta * v));
    let lu = system.lu();
    if !lu.is_invertible() {
        return Err(PcError::Singular);
    }
    let sol = lu.solve(&rhs).ok_or(PcError::Singular)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(PcError::Singular);
    }
    Ok(sol.iter().copied().collect())
}

/// Damped regularized Newton step from the backpropagation gradient and a
/// finite-difference Hessian of it, shaped like the weights.
pub fn newton_update(net: &Network, x: &Batch, y: &Batch, beta: f64) -> Result<GradSet> {
    require_single_sample(x, "the Newton comparison")?;
    let theta0 = net.params.flatten();
    let g = bp_grads(net, x, y)?.flatten();
    let grad_at = |t: &[f64]| -> Vec<f64> {
        let params = net.params.unflatten_like(t).expect("length preserved");
        net.with_params(params)
            .and_then(|n| bp_grads(&n, x, y))
            .map(|g| g.flatten())
            .unwrap_or_else(|_| vec![f64::NAN; t.len()])
    };
    let hessian = symmetric_jacobian(grad_at, &theta0, HESSIAN_STEP);
    let step = damped_newton_step(&g, &hessian, beta)?;
    Ok(GradSet {
        grads: net.params.unflatten_like(&step)?.weights,
    })
}

/// `θ_new − θ_old` as a flat vector.
pub fn param_step(new: &Params, old: &Params) -> Vec<f64> {
    new.flatten().iter().zip(old.flatten()).map(|(a, b)| a - b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Activation, Mat, OutputNl};
    use crate::pcn::NetworkSpec;

    /// `𝓛 = ½ b²` through a bias-only path: input zero, identity output.
    fn quadratic(b: f64) -> (Network, Batch, Batch) {
        let spec = NetworkSpec::new(vec![1, 1], Activation::Identity, OutputNl::Identity).unwrap();
        let net = Network::new(
            spec,
            Params {
                weights: vec![Mat::from_rows(&[[0.3, b]])],
            },
        )
        .unwrap();
        (net, Mat::row_vector(&[0.0]), Mat::row_vector(&[0.0]))
    }

    #[test]
    fn oracle_solves_scalar_quadratic() {
        let (net, x, y) = quadratic(1.0);
        let out = implicit_sgd_oracle(&net, &x, &y, 1.0, 1e-12).unwrap();
        assert!((out.weights[0].get(0, 1) - 0.5).abs() < 1e-10);
        assert_eq!(out.weights[0].get(0, 0), 0.3);

        let out = implicit_sgd_oracle(&net, &x, &y, 1e-6, 1e-8).unwrap();
        assert!((out.weights[0].get(0, 1) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn oracle_rejects_batches() {
        let (net, _, _) = quadratic(1.0);
        let x = Mat::from_rows(&[[0.0], [1.0]]);
        assert!(matches!(
            implicit_sgd_oracle(&net, &x, &x, 1.0, 1e-9),
            Err(PcError::BatchSizeOne { .. })
        ));
    }

    #[test]
    fn newton_examples() {
        let (net, x, y) = quadratic(1.0);
        let step = newton_update(&net, &x, &y, 1.0).unwrap();
        assert!((step.grads[0].get(0, 1) + 0.5).abs() < 1e-8);
        assert!(step.grads[0].get(0, 0).abs() < 1e-12);

        let h = DMatrix::zeros(2, 2);
        assert_eq!(damped_newton_step(&[1.0, -2.0], &h, 0.25).unwrap(), vec![-0.25, 0.5]);

        let h = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(matches!(damped_newton_step(&[1.0], &h, 1.0), Err(PcError::Singular)));
    }
}
