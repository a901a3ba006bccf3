//! The proximal objective and its measurement during inference.

use crate::error::{PcError, Result};
use crate::inference::{begin, step, InferenceConfig};
use crate::math::Batch;
use crate::optim::{il_weight_grads, Optimizer};
use crate::pcn::{ActivityState, GammaSchedule, Network, NetworkSpec, Params};

/// `𝓛(y, forward(θ_new, x)) + ‖θ_new − θ_old‖² / 2β`
pub fn prox_objective(
    spec: &NetworkSpec,
    theta_new: &Params,
    theta_old: &Params,
    x: &Batch,
    y: &Batch,
    beta: f64,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(PcError::InvalidConfig(format!("beta must be positive, got {beta}")));
    }
    let net = Network::new(spec.clone(), theta_new.clone())?;
    let reg = if beta.is_infinite() {
        0.0
    } else {
        theta_new.dist_sq(theta_old)? / (2.0 * beta)
    };
    Ok(net.loss(x, y)? + reg)
}

/// Proximal objective of the tentative update at every inference iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxTrace {
    pub beta: f64,
    /// Entry `t` is measured after `t` iterations; length `T + 1`.
    pub values: Vec<f64>,
}

impl ProxTrace {
    pub fn initial(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("trace has the t = 0 entry")
    }
}

/// Runs inference as training would and, before each iteration and after
/// the last, evaluates the proximal objective of the weight update the
/// optimizer would make from the current state. The updates are discarded,
/// so params, optimizer and the returned state match an untraced run.
pub fn prox_trace_during_inference(
    net: &Network,
    x: &Batch,
    y: &Batch,
    cfg: &InferenceConfig,
    gammas: &GammaSchedule,
    optimizer: &Optimizer,
    beta: f64,
) -> Result<(ProxTrace, ActivityState)> {
    let mut gammas = gammas.clone();
    let mut state = begin(net, x, y, cfg.clamp, &mut gammas)?;
    let mut values = Vec::with_capacity(cfg.iterations + 1);
    for t in 0..=cfg.iterations {
        if t > 0 {
            step(net, &mut state, cfg, &mut gammas)?;
        }
        let grads = il_weight_grads(net, &state)?;
        let tentative = optimizer.preview(&net.params, &grads)?;
        values.push(prox_objective(&net.spec, &tentative, &net.params, x, y, beta)?);
    }
    Ok((ProxTrace { beta, values }, state))
}
