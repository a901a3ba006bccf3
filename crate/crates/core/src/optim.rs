//! Weight gradients for inference learning and backpropagation, and the
//! SGD, Adam and MQ optimizers.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, PcError, Result};
use crate::inference::{begin, infer, InferenceConfig, Schedule};
use crate::math::{affine, apply_act, apply_act_deriv, backproject, mse, outer_accum, Batch, Mat};
use crate::pcn::{ActivityState, Clamp, GammaSchedule, Network, Params};

/// One gradient (or update) matrix per weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub grads: Vec<Mat>,
}

impl GradSet {
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            grads: params.zeros_like().weights,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            grads: self.grads.iter().map(|g| g.scale(s)).collect(),
        }
    }

    pub fn axpy(&mut self, s: f64, other: &GradSet) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return shape_err("GradSet::axpy", "different number of matrices");
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.axpy(s, b)?;
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|g| g.data().iter().copied()).collect()
    }

    pub fn max_abs_diff(&self, other: &GradSet) -> Result<f64> {
        if self.grads.len() != other.grads.len() {
            return shape_err("GradSet::max_abs_diff", "different number of matrices");
        }
        self.grads
            .iter()
            .zip(&other.grads)
            .try_fold(0.0f64, |m, (a, b)| Ok(m.max(a.max_abs_diff(b)?)))
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Mat::is_finite)
    }

    fn check(&self, params: &Params) -> Result<()> {
        let ok = self.grads.len() == params.weights.len()
            && self
                .grads
                .iter()
                .zip(&params.weights)
                .all(|(g, w)| g.shape() == w.shape());
        if ok {
            Ok(())
        } else {
            shape_err("optimizer", "gradient shapes do not match the weights")
        }
    }
}

/// `−(1/N) Σ_samples δ_{l+1} [f(ĥ_l); 1]^T` for every `l`, with `δ` the
/// stored errors (the output error pulled back through `σ` under full
/// clamp). One product per matrix.
pub fn il_weight_grads(net: &Network, state: &ActivityState) -> Result<GradSet> {
    let n = state.batch_size() as f64;
    let grads = (0..state.depth())
        .map(|l| Ok(outer_accum(&state.delta(net, l + 1)?, &state.act[l])?.scale(-1.0 / n)))
        .collect::<Result<_>>()?;
    Ok(GradSet { grads })
}

/// `∂F/∂W_l`: the inference-learning gradients weighted by `γ_{l+1}`.
pub fn energy_weight_grads(net: &Network, state: &ActivityState, gammas: &GammaSchedule) -> Result<GradSet> {
    let mut g = il_weight_grads(net, state)?;
    for (l, m) in g.grads.iter_mut().enumerate() {
        *m = m.scale(gammas.gamma[l + 1]);
    }
    Ok(g)
}

/// Mean squared error of `σ(p_L)` and its exact gradient by backpropagation.
pub fn bp_loss_and_grads(net: &Network, x: &Batch, y: &Batch) -> Result<(f64, GradSet)> {
    let l_top = net.depth();
    let n = x.rows() as f64;
    let mut h = vec![x.clone()];
    let mut acts = Vec::with_capacity(l_top);
    for w in &net.params.weights {
        let a = apply_act(net.act(), h.last().expect("input present"));
        h.push(affine(w, &a)?);
        acts.push(a);
    }
    let out = net.spec.output_nl.apply(&h[l_top]);
    let loss = mse(y, &out)?;
    let dout = out.sub(y)?.scale(1.0 / n);
    let mut delta = net.spec.output_nl.vjp(&h[l_top], &dout)?;
    let mut grads = vec![Mat::zeros(0, 0); l_top];
    for l in (0..l_top).rev() {
        grads[l] = outer_accum(&delta, &acts[l])?;
        if l > 0 {
            let back = backproject(&net.params.weights[l], &delta)?;
            delta = apply_act_deriv(net.act(), &h[l]).hadamard(&back)?;
        }
    }
    Ok((loss, GradSet { grads }))
}

pub fn bp_grads(net: &Network, x: &Batch, y: &Batch) -> Result<GradSet> {
    Ok(bp_loss_and_grads(net, x, y)?.1)
}

fn check_rates(rates: &[f64], params: &Params, what: &str) -> Result<()> {
    if rates.len() != params.weights.len() {
        return Err(PcError::InvalidConfig(format!(
            "{} {what} for {} weight matrices",
            rates.len(),
            params.weights.len()
        )));
    }
    Ok(())
}

/// `W_l ← W_l − α_l · grad_l`
pub fn sgd_step(params: &mut Params, grads: &GradSet, alphas: &[f64]) -> Result<()> {
    grads.check(params)?;
    check_rates(alphas, params, "learning rates")?;
    for ((w, g), &a) in params.weights.iter_mut().zip(&grads.grads).zip(alphas) {
        w.axpy(-a, g)?;
    }
    Ok(())
}

/// Matrix update equalization: one adaptive scalar rate per matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MqState {
    pub alpha: Vec<f64>,
    pub alpha_min: f64,
    pub r: f64,
    pub rho: f64,
    pub v: Vec<f64>,
    /// Training iterations seen, shared by all matrices.
    pub b: u64,
}

impl MqState {
    pub const ALPHA_MIN: f64 = 0.001;
    pub const R: f64 = 1e-6;
    pub const RHO: f64 = 0.9999;

    /// Default constants, `v_l = α_l`.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        Self::with_constants(alpha, Self::ALPHA_MIN, Self::R, Self::RHO)
    }

    pub fn with_constants(alpha: Vec<f64>, alpha_min: f64, r: f64, rho: f64) -> Result<Self> {
        if alpha.iter().any(|&a| !(a >= 0.0)) || !(alpha_min >= 0.0) {
            return Err(PcError::InvalidConfig("MQ rates must be non-negative".into()));
        }
        if !(r > 0.0) || !(rho > 0.0 && rho < 1.0) {
            return Err(PcError::InvalidConfig(format!(
                "MQ needs r > 0 and 0 < ρ < 1, got r = {r}, ρ = {rho}"
            )));
        }
        Ok(Self {
            v: alpha.clone(),
            alpha,
            alpha_min,
            r,
            rho,
            b: 0,
        })
    }

    /// `min(ρ, 1/(b + 2))`
    pub fn rho_star(&self) -> f64 {
        self.rho.min(1.0 / (self.b as f64 + 2.0))
    }

    /// `v_l ← (1 − ρ*) v_l + ρ* mean|grad_l|`, then `b += 1`.
    pub fn update_v(&mut self, grads: &GradSet) -> Result<()> {
        if grads.grads.len() != self.v.len() {
            return shape_err("MqState::update_v", "one gradient per matrix expected");
        }
        let rho = self.rho_star();
        for (v, g) in self.v.iter_mut().zip(&grads.grads) {
            *v = (1.0 - rho) * *v + rho * g.mean_abs();
        }
        self.b += 1;
        Ok(())
    }

    pub fn effective_rate(&self, l: usize) -> f64 {
        self.alpha[l] / (self.v[l] + self.r) + self.alpha_min
    }

    /// `W_l ← W_l − (α_l/(v_l + r) + α_min) · grad_l` with the current `v`.
    pub fn step(&self, params: &mut Params, grads: &GradSet) -> Result<()> {
        grads.check(params)?;
        check_rates(&self.alpha, params, "MQ rates")?;
        for (l, (w, g)) in params.weights.iter_mut().zip(&grads.grads).enumerate() {
            w.axpy(-self.effective_rate(l), g)?;
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments and one learning rate per matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Params, lr: Vec<f64>) -> Result<Self> {
        check_rates(&lr, params, "learning rates")?;
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like().weights,
            v: params.zeros_like().weights,
            t: 0,
        })
    }

    pub fn step(&mut self, params: &mut Params, grads: &GradSet) -> Result<()> {
        grads.check(params)?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for l in 0..params.weights.len() {
            let g = grads.grads[l].data();
            let m = self.m[l].data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v[l].data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let lr = self.lr[l];
            let (m, v) = (self.m[l].data(), self.v[l].data());
            for ((w, mi), vi) in params.weights[l].data_mut().iter_mut().zip(m).zip(v) {
                *w -= lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Which learning algorithm produces the weight gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Bp,
    /// Inference learning with simultaneous inference.
    Il,
    /// Inference learning with sequential inference.
    SeqIl,
}

impl Algorithm {
    pub fn schedule(self) -> Option<Schedule> {
        match self {
            Algorithm::Bp => None,
            Algorithm::Il => Some(Schedule::Simultaneous),
            Algorithm::SeqIl => Some(Schedule::Sequential),
        }
    }
}

impl FromStr for Algorithm {
    type Err = PcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bp" => Ok(Algorithm::Bp),
            "il" => Ok(Algorithm::Il),
            "seqil" => Ok(Algorithm::SeqIl),
            other => Err(PcError::InvalidConfig(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Bp => "bp",
            Algorithm::Il => "il",
            Algorithm::SeqIl => "seqil",
        })
    }
}

/// Weight gradients for one mini-batch: backpropagation, or a full inference
/// phase from the feed-forward state followed by the local gradients.
pub fn training_grads(
    net: &Network,
    x: &Batch,
    y: &Batch,
    algorithm: Algorithm,
    iterations: usize,
    epsilon: f64,
    clamp: Clamp,
) -> Result<GradSet> {
    let Some(schedule) = algorithm.schedule() else {
        return bp_grads(net, x, y);
    };
    let cfg = InferenceConfig::new(iterations, epsilon, schedule, clamp)?;
    let mut gammas = GammaSchedule::standard(net.depth());
    let mut state = begin(net, x, y, clamp, &mut gammas)?;
    infer(net, &mut state, &cfg, &mut gammas)?;
    il_weight_grads(net, &state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Mq,
}

impl FromStr for OptimizerKind {
    type Err = PcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "mq" => Ok(OptimizerKind::Mq),
            other => Err(PcError::InvalidConfig(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Mq => "mq",
        })
    }
}

/// Optimizer state for one training run.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { alphas: Vec<f64> },
    Adam(AdamState),
    Mq(MqState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &Params, rates: Vec<f64>) -> Result<Self> {
        check_rates(&rates, params, "learning rates")?;
        Ok(match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { alphas: rates },
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params, rates)?),
            OptimizerKind::Mq => Optimizer::Mq(MqState::new(rates)?),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Sgd { .. } => OptimizerKind::Sgd,
            Optimizer::Adam(_) => OptimizerKind::Adam,
            Optimizer::Mq(_) => OptimizerKind::Mq,
        }
    }

    /// Applies one training-iteration update; MQ refreshes `v` first.
    pub fn step(&mut self, params: &mut Params, grads: &GradSet) -> Result<()> {
        match self {
            Optimizer::Sgd { alphas } => sgd_step(params, grads, alphas),
            Optimizer::Adam(adam) => adam.step(params, grads),
            Optimizer::Mq(mq) => {
                mq.update_v(grads)?;
                mq.step(params, grads)
            }
        }
    }

    /// The parameters one step would produce, leaving `self` untouched.
    pub fn preview(&self, params: &Params, grads: &GradSet) -> Result<Params> {
        let mut scratch = self.clone();
        let mut out = params.clone();
        scratch.step(&mut out, grads)?;
        Ok(out)
    }
}
