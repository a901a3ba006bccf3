//! Checks of the link between inference learning and the proximal update
//! under the proximal γ schedule.

use super::fd::{finite_diff_grad, GRAD_STEP};
use crate::error::{PcError, Result};
use crate::inference::{begin, infer, InferenceConfig, Schedule};
use crate::math::Batch;
use crate::optim::il_weight_grads;
use crate::pcn::{energy_grad_hidden, refresh_errors, ActivityState, Clamp, GammaSchedule, Network, Params};

/// Outcome of comparing `∂Prox/∂ĥ_l` with `∂F/∂ĥ_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub layer: usize,
    pub numeric: Vec<f64>,
    pub analytic: Vec<f64>,
    /// `numeric_i / analytic_i` over coordinates where `analytic` is not
    /// negligible.
    pub ratios: Vec<f64>,
    /// Mean ratio; `1/β` when the lemma holds.
    pub constant: f64,
    /// `(max − min) / |mean|` of the ratios.
    pub rel_spread: f64,
    /// Set when either gradient is too small for ratios to mean anything.
    pub inconclusive: bool,
}

/// Compares, for hidden layer `l` with `1 ≤ l ≤ L − 2`, the finite-difference
/// gradient of the proximal regularizer `Σ_k ‖α_k e_{k+1} [f(ĥ_k); 1]^T‖²/2β`
/// (errors recomputed from `ĥ`) with the analytic `∂F/∂ĥ_l` under the
/// proximal γ weights. The loss term is left out: it depends on `ĥ_l` only
/// through the output layer. Layer `L − 1` is excluded because its upper
/// weight `γ_L` follows the output-layer argument instead.
pub fn lemma1_check(net: &Network, state: &ActivityState, alphas: &[f64], beta: f64, l: usize) -> Result<Lemma1Report> {
    let l_top = state.depth();
    if l == 0 || l + 2 > l_top {
        return Err(PcError::InvalidConfig(format!(
            "the proportionality check covers layers 1..={}, got {l}",
            l_top.saturating_sub(2)
        )));
    }
    let mut base = state.clone();
    base.record_reads = false;
    refresh_errors(net, &mut base)?;
    let gammas = GammaSchedule::theorem1(&base, alphas, beta)?;
    let analytic = energy_grad_hidden(net, &base, &gammas, l)?.into_vec();

    let regularizer = |v: &[f64]| {
        let mut s = base.clone();
        s.hhat[l].data_mut().copy_from_slice(v);
        refresh_errors(net, &mut s).expect("shapes preserved");
        let g = il_weight_grads(net, &s).expect("shapes preserved");
        g.grads.iter().zip(alphas).map(|(m, a)| a * a * m.sum_sq()).sum::<f64>() / (2.0 * beta)
    };
    let numeric = finite_diff_grad(regularizer, base.hhat[l].data(), GRAD_STEP);

    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let num_scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let inconclusive = scale < 1e-9 || num_scale < 1e-9;
    let ratios: Vec<f64> = if inconclusive {
        Vec::new()
    } else {
        analytic
            .iter()
            .zip(&numeric)
            .filter(|(a, _)| a.abs() > 1e-3 * scale)
            .map(|(a, n)| n / a)
            .collect()
    };
    let (constant, rel_spread) = if ratios.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean, (hi - lo) / mean.abs())
    };
    Ok(Lemma1Report {
        layer: l,
        numeric,
        analytic,
        ratios,
        constant,
        rel_spread,
        inconclusive,
    })
}

/// The parameters after one inference-learning update with the proximal γ
/// weights: soft clamp, `T` simultaneous iterations, then
/// `ΔW_l = α_l e_{l+1} [f(ĥ_l); 1]^T` with errors refreshed at the end.
pub fn theorem1_il_update(
    net: &Network,
    x: &Batch,
    y: &Batch,
    alphas: &[f64],
    beta: f64,
    epsilon: f64,
    iterations: usize,
) -> Result<Params> {
    let cfg = InferenceConfig::new(iterations, epsilon, Schedule::Simultaneous, Clamp::Soft)?;
    let mut gammas = GammaSchedule::theorem1_deferred(net.depth(), alphas, beta);
    let mut state = begin(net, x, y, Clamp::Soft, &mut gammas)?;
    infer(net, &mut state, &cfg, &mut gammas)?;
    refresh_errors(net, &mut state)?;
    let grads = il_weight_grads(net, &state)?;
    let mut params = net.params.clone();
    for ((w, g), a) in params.weights.iter_mut().zip(&grads.grads).zip(alphas) {
        w.axpy(-a, g)?;
    }
    Ok(params)
}

/// Euclidean distance between two parameter sets.
pub fn param_distance(a: &Params, b: &Params) -> Result<f64> {
    Ok(a.dist_sq(b)?.sqrt())
}
