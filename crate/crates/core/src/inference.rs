//! The inference phase: output clamping and the two activity schedules.
//!
//! Predictions are the only products inference needs. The feed-forward pass
//! that initializes the state also serves as the first iteration's
//! predictions, and every later iteration recomputes all `L` of them, so a
//! run of `T` iterations costs `T(2L − 1) − L` products on top of the
//! initial pass. After each iteration the errors are refreshed against the
//! stored predictions, which needs no products.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, PcError, Result};
use crate::math::Batch;
use crate::pcn::{energy_grad_hidden, ActivityState, Clamp, GammaSchedule, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Errors frozen at the start of each iteration, all layers updated.
    Simultaneous,
    /// Top-down sweep, errors recomputed right before each layer's update.
    Sequential,
}

impl FromStr for Schedule {
    type Err = PcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simultaneous" | "il" => Ok(Schedule::Simultaneous),
            "sequential" | "seqil" => Ok(Schedule::Sequential),
            other => Err(PcError::InvalidConfig(format!("unknown schedule '{other}'"))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Simultaneous => "simultaneous",
            Schedule::Sequential => "sequential",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub iterations: usize,
    pub epsilon: f64,
    pub schedule: Schedule,
    pub clamp: Clamp,
}

impl InferenceConfig {
    pub fn new(iterations: usize, epsilon: f64, schedule: Schedule, clamp: Clamp) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(PcError::InvalidConfig(format!(
                "activity step size must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            iterations,
            epsilon,
            schedule,
            clamp,
        })
    }
}

/// `ĥ_L ← y`.
pub fn clamp_output_full(net: &Network, state: &mut ActivityState, y: &Batch) -> Result<()> {
    let l_top = state.depth();
    if y.shape() != state.hhat[l_top].shape() {
        return shape_err(
            "clamp_output_full",
            format!("target {:?} for output {:?}", y.shape(), state.hhat[l_top].shape()),
        );
    }
    state.target = y.clone();
    state.hhat[l_top] = y.clone();
    state.restamp_error(net, l_top)
}

/// `ĥ_L ← (y + γ_L p_L) / (1 + γ_L)` with the stored linear `p_L`, which
/// zeroes `γ_L e_L + (ĥ_L − y)`. Negative `γ_L` is accepted down to `−1`.
pub fn clamp_output_soft(state: &mut ActivityState, gamma_l: f64) -> Result<()> {
    if !(gamma_l > -1.0) || !gamma_l.is_finite() {
        return Err(PcError::InvalidConfig(format!(
            "soft clamp needs γ_L > −1, got {gamma_l}"
        )));
    }
    let l_top = state.depth();
    let inv = 1.0 / (1.0 + gamma_l);
    let hhat = state
        .target
        .zip_map(&state.pred[l_top], |y, p| (y + gamma_l * p) * inv)?;
    state.err[l_top] = hhat.sub(&state.pred[l_top])?;
    state.hhat[l_top] = hhat;
    state.err_stamp[l_top] = state.updates;
    Ok(())
}

fn clamp_output(net: &Network, state: &mut ActivityState, gammas: &mut GammaSchedule) -> Result<()> {
    let l_top = state.depth();
    match state.clamp {
        Clamp::Full => state.restamp_error(net, l_top),
        Clamp::Soft => {
            gammas.refresh(state)?;
            clamp_output_soft(state, gammas.gamma[l_top])
        }
    }
}

/// One gradient step on hidden layer `l` using the stored `e_l` and
/// `e_{l+1}`.
pub fn activity_step(
    net: &Network,
    state: &mut ActivityState,
    l: usize,
    epsilon: f64,
    gammas: &GammaSchedule,
) -> Result<()> {
    let grad = energy_grad_hidden(net, state, gammas, l)?;
    state.log_read(l, l);
    state.log_read(l, l + 1);
    state.hhat[l].axpy(-epsilon, &grad)?;
    state.updates += 1;
    state.preds_current = false;
    Ok(())
}

/// Builds the state for one mini-batch: feed-forward initialization, then
/// the configured clamp. Proximal γ weights are evaluated at the new state.
pub fn begin(net: &Network, x: &Batch, y: &Batch, clamp: Clamp, gammas: &mut GammaSchedule) -> Result<ActivityState> {
    let mut state = ActivityState::from_forward(net, x, y, clamp)?;
    match clamp {
        Clamp::Full => clamp_output_full(net, &mut state, y)?,
        Clamp::Soft => clamp_output(net, &mut state, gammas)?,
    }
    gammas.refresh(&state)?;
    Ok(state)
}

/// Recomputes all predictions unless they already match the current `ĥ`.
fn repredict_all(net: &Network, state: &mut ActivityState) -> Result<()> {
    if !state.preds_current {
        for l in 1..=state.depth() {
            state.repredict(net, l)?;
        }
        state.preds_current = true;
    }
    Ok(())
}

fn restamp_all(net: &Network, state: &mut ActivityState) -> Result<()> {
    for l in 1..=state.depth() {
        state.restamp_error(net, l)?;
    }
    Ok(())
}

/// One simultaneous iteration: compute and store every error from the
/// pre-iteration activities, then update every hidden layer from them.
pub fn simultaneous_iteration(
    net: &Network,
    state: &mut ActivityState,
    epsilon: f64,
    gammas: &mut GammaSchedule,
) -> Result<()> {
    state.begin_iteration();
    repredict_all(net, state)?;
    clamp_output(net, state, gammas)?;
    restamp_all(net, state)?;
    gammas.refresh(state)?;
    for l in (1..state.depth()).rev() {
        activity_step(net, state, l, epsilon, gammas)?;
    }
    restamp_all(net, state)?;
    state.iteration += 1;
    Ok(())
}

/// One sequential sweep from `L − 1` down to `1`, recomputing `e_{l+1}` and
/// `e_l` from the current activities right before each update.
pub fn sequential_sweep(
    net: &Network,
    state: &mut ActivityState,
    epsilon: f64,
    gammas: &mut GammaSchedule,
) -> Result<()> {
    state.begin_iteration();
    let l_top = state.depth();
    let reuse = state.preds_current;
    if !reuse {
        state.repredict(net, l_top)?;
    }
    clamp_output(net, state, gammas)?;
    for l in (1..l_top).rev() {
        if !reuse {
            state.repredict(net, l)?;
        }
        state.restamp_error(net, l + 1)?;
        state.restamp_error(net, l)?;
        gammas.refresh(state)?;
        activity_step(net, state, l, epsilon, gammas)?;
    }
    restamp_all(net, state)?;
    state.iteration += 1;
    Ok(())
}

/// Runs `cfg.iterations` iterations of the configured schedule.
pub fn infer(
    net: &Network,
    state: &mut ActivityState,
    cfg: &InferenceConfig,
    gammas: &mut GammaSchedule,
) -> Result<()> {
    for _ in 0..cfg.iterations {
        step(net, state, cfg, gammas)?;
    }
    Ok(())
}

/// A single iteration of the configured schedule.
pub fn step(net: &Network, state: &mut ActivityState, cfg: &InferenceConfig, gammas: &mut GammaSchedule) -> Result<()> {
    match cfg.schedule {
        Schedule::Simultaneous => simultaneous_iteration(net, state, cfg.epsilon, gammas),
        Schedule::Sequential => sequential_sweep(net, state, cfg.epsilon, gammas),
    }
}

/// proximal γ weights for a single-sample state.
pub fn theorem1_gammas(state: &ActivityState, alphas: &[f64], beta: f64) -> Result<GammaSchedule> {
    GammaSchedule::theorem1(state, alphas, beta)
}
