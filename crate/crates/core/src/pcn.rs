//! Network definition, the feed-forward pass, the activity state that
//! inference operates on, and the free energy.
//!
//! Layer-indexed vectors (`hhat`, `pred`, `err`, the γ lists) are aligned with
//! layer numbers: entry `l` belongs to layer `l`, and slots that have no
//! meaning (there is no prediction of layer 0) hold an empty placeholder.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, PcError, Result};
use crate::math::{affine, apply_act, apply_act_deriv, backproject, mse, Activation, Batch, Mat, OutputNl};

/// Layer sizes `d_0..d_L` and nonlinearities.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub layer_dims: Vec<usize>,
    pub hidden_act: Activation,
    pub output_nl: OutputNl,
}

impl NetworkSpec {
    pub fn new(layer_dims: Vec<usize>, hidden_act: Activation, output_nl: OutputNl) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(PcError::InvalidConfig(format!(
                "a network needs at least an input and an output layer, got dims {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(PcError::InvalidConfig(format!(
                "layer dimensions must be positive, got {layer_dims:?}"
            )));
        }
        Ok(Self {
            layer_dims,
            hidden_act,
            output_nl,
        })
    }

    /// Number of weight matrices, `L`.
    pub fn depth(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Shape of `W_l`: `d_{l+1} x (d_l + 1)`.
    pub fn weight_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_dims[l + 1], self.layer_dims[l] + 1)
    }

    pub fn param_count(&self) -> usize {
        (0..self.depth())
            .map(|l| {
                let (r, c) = self.weight_shape(l);
                r * c
            })
            .sum()
    }
}

/// Weight matrices `W_0..W_{L-1}`, bias in the trailing column.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Vec<Mat>,
}

impl Params {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            weights: (0..spec.depth())
                .map(|l| {
                    let (r, c) = spec.weight_shape(l);
                    Mat::zeros(r, c)
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.data().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenates all weights, matrix by matrix, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for w in &self.weights {
            out.extend_from_slice(w.data());
        }
        out
    }

    /// Inverse of [`Params::flatten`], using `self` for the shapes.
    pub fn unflatten_like(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.len() {
            return shape_err(
                "Params::unflatten_like",
                format!("expected {} values, got {}", self.len(), flat.len()),
            );
        }
        let mut offset = 0;
        let mut weights = Vec::with_capacity(self.weights.len());
        for w in &self.weights {
            let n = w.data().len();
            weights.push(Mat::from_vec(w.rows(), w.cols(), flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(Self { weights })
    }

    /// `Σ_l ‖self_l − other_l‖²`
    pub fn dist_sq(&self, other: &Params) -> Result<f64> {
        self.check_shapes(other)?;
        Ok(self
            .flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Mat::is_finite)
    }

    pub fn check_shapes(&self, other: &Params) -> Result<()> {
        let same = self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.shape() == b.shape());
        if same {
            Ok(())
        } else {
            shape_err("Params", "parameter sets have different shapes")
        }
    }

    pub fn check_spec(&self, spec: &NetworkSpec) -> Result<()> {
        if self.weights.len() != spec.depth() {
            return shape_err(
                "Params",
                format!("{} matrices for a depth-{} network", self.weights.len(), spec.depth()),
            );
        }
        for (l, w) in self.weights.iter().enumerate() {
            if w.shape() != spec.weight_shape(l) {
                return shape_err(
                    "Params",
                    format!("W_{l} is {:?}, expected {:?}", w.shape(), spec.weight_shape(l)),
                );
            }
        }
        Ok(())
    }
}

/// A network specification together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Params,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: Params) -> Result<Self> {
        params.check_spec(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn depth(&self) -> usize {
        self.spec.depth()
    }

    pub fn with_params(&self, params: Params) -> Result<Self> {
        Self::new(self.spec.clone(), params)
    }

    pub fn act(&self) -> Activation {
        self.spec.hidden_act
    }

    /// `h_0 = x`, `h_{l+1} = W_l [f(h_l); 1]`. The last layer is passed
    /// through the output nonlinearity only when `apply_output_nl` is set.
    pub fn forward(&self, x: &Batch, apply_output_nl: bool) -> Result<Vec<Batch>> {
        if x.cols() != self.spec.layer_dims[0] {
            return shape_err(
                "forward",
                format!("input width {} but d_0 = {}", x.cols(), self.spec.layer_dims[0]),
            );
        }
        let mut h = Vec::with_capacity(self.depth() + 1);
        h.push(x.clone());
        for w in &self.params.weights {
            let a = apply_act(self.act(), h.last().expect("h_0 is present"));
            h.push(affine(w, &a)?);
        }
        if apply_output_nl {
            let top = h.pop().expect("at least one layer");
            h.push(self.spec.output_nl.apply(&top));
        }
        Ok(h)
    }

    /// Network output `σ(p_L)`.
    pub fn predict(&self, x: &Batch) -> Result<Batch> {
        Ok(self.forward(x, true)?.pop().expect("at least one layer"))
    }

    /// Mean squared error of the prediction.
    pub fn loss(&self, x: &Batch, y: &Batch) -> Result<f64> {
        mse(y, &self.predict(x)?)
    }
}

/// How the output layer is tied to the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clamp {
    /// `ĥ_L = y`; the output nonlinearity enters `e_L`.
    Full,
    /// `ĥ_L` is the closed-form compromise between `y` and the linear `p_L`.
    Soft,
}

impl FromStr for Clamp {
    type Err = PcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Clamp::Full),
            "soft" => Ok(Clamp::Soft),
            other => Err(PcError::InvalidConfig(format!("unknown clamp mode '{other}'"))),
        }
    }
}

impl fmt::Display for Clamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clamp::Full => "full",
            Clamp::Soft => "soft",
        })
    }
}

/// One read of a stored error by an activity update, kept when
/// [`ActivityState::record_reads`] is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorRead {
    /// Hidden layer being updated.
    pub updating: usize,
    /// Layer whose error was read.
    pub layer: usize,
    /// Activity-update counter when the error was computed.
    pub computed_at: u64,
    /// Activity-update counter when the current iteration started.
    pub iteration_start: u64,
    /// Activity-update counter at the time of the read.
    pub read_at: u64,
}

impl ErrorRead {
    /// The error reflects every activity update made so far.
    pub fn is_current(&self) -> bool {
        self.computed_at == self.read_at
    }

    /// The error was computed before any update of the current iteration.
    pub fn is_from_iteration_start(&self) -> bool {
        self.computed_at == self.iteration_start
    }
}

/// Per-layer buffers for one mini-batch during inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityState {
    /// `ĥ_0..ĥ_L`; `ĥ_0` is the input and is never modified.
    pub hhat: Vec<Batch>,
    /// `f(ĥ_l)` for `l < L` as it was when `pred[l + 1]` was computed.
    pub act: Vec<Batch>,
    /// Linear predictions `p_1..p_L` (slot 0 is a placeholder).
    pub pred: Vec<Batch>,
    /// Errors `e_1..e_L` (slot 0 is a placeholder).
    pub err: Vec<Batch>,
    pub target: Batch,
    pub clamp: Clamp,
    /// Inference iterations completed.
    pub iteration: usize,
    /// Total hidden-layer activity updates applied.
    pub updates: u64,
    /// No activity has moved since the predictions were computed.
    pub(crate) preds_current: bool,
    pub(crate) iteration_start: u64,
    pub(crate) err_stamp: Vec<u64>,
    /// When set, activity updates log which errors they read.
    pub record_reads: bool,
    pub reads: Vec<ErrorRead>,
}

fn placeholder(n: usize) -> Batch {
    Mat::zeros(n, 0)
}

impl ActivityState {
    /// Initializes `ĥ = h` from a feed-forward pass (`L` products). The
    /// output is left at `p_L`; clamping is a separate step.
    pub fn from_forward(net: &Network, x: &Batch, y: &Batch, clamp: Clamp) -> Result<Self> {
        let l_top = net.depth();
        if y.rows() != x.rows() || y.cols() != net.spec.layer_dims[l_top] {
            return shape_err(
                "ActivityState",
                format!(
                    "target {}x{} for {} samples of output width {}",
                    y.rows(),
                    y.cols(),
                    x.rows(),
                    net.spec.layer_dims[l_top]
                ),
            );
        }
        let n = x.rows();
        let mut state = Self {
            hhat: vec![x.clone()],
            act: Vec::with_capacity(l_top),
            pred: vec![placeholder(n)],
            err: vec![placeholder(n)],
            target: y.clone(),
            clamp,
            iteration: 0,
            updates: 0,
            preds_current: true,
            iteration_start: 0,
            err_stamp: vec![0; l_top + 1],
            record_reads: false,
            reads: Vec::new(),
        };
        if x.cols() != net.spec.layer_dims[0] {
            return shape_err("ActivityState", "input width does not match d_0");
        }
        for (l, w) in net.params.weights.iter().enumerate() {
            let a = apply_act(net.act(), &state.hhat[l]);
            let p = affine(w, &a)?;
            state.act.push(a);
            state.hhat.push(p.clone());
            state.pred.push(p);
        }
        for l in 1..=l_top {
            let e = state.error_against_pred(net, l)?;
            state.err.push(e);
        }
        Ok(state)
    }

    pub fn depth(&self) -> usize {
        self.hhat.len() - 1
    }

    pub fn batch_size(&self) -> usize {
        self.target.rows()
    }

    /// `ĥ_l − p_l`, with `σ` applied to `p_L` under full clamp. Uses the
    /// stored prediction; no products.
    pub(crate) fn error_against_pred(&self, net: &Network, l: usize) -> Result<Batch> {
        if l == self.depth() && self.clamp == Clamp::Full {
            self.hhat[l].sub(&net.spec.output_nl.apply(&self.pred[l]))
        } else {
            self.hhat[l].sub(&self.pred[l])
        }
    }

    /// Recomputes `e_l` from `ĥ_l` and the stored `p_l`.
    pub(crate) fn restamp_error(&mut self, net: &Network, l: usize) -> Result<()> {
        self.err[l] = self.error_against_pred(net, l)?;
        self.err_stamp[l] = self.updates;
        Ok(())
    }

    /// Recomputes `p_l` from the current `ĥ_{l-1}` (one product).
    pub(crate) fn repredict(&mut self, net: &Network, l: usize) -> Result<()> {
        let a = apply_act(net.act(), &self.hhat[l - 1]);
        self.pred[l] = affine(&net.params.weights[l - 1], &a)?;
        self.act[l - 1] = a;
        Ok(())
    }

    pub(crate) fn begin_iteration(&mut self) {
        self.iteration_start = self.updates;
    }

    pub(crate) fn log_read(&mut self, updating: usize, layer: usize) {
        if self.record_reads {
            self.reads.push(ErrorRead {
                updating,
                layer,
                computed_at: self.err_stamp[layer],
                iteration_start: self.iteration_start,
                read_at: self.updates,
            });
        }
    }

    /// `δ_L = J_σ(p_L)^T e_L` under full clamp, `e_L` otherwise; for lower
    /// layers simply `e_l`. This is `−∂F/∂p_l` up to the weight `γ_l`.
    pub(crate) fn delta(&self, net: &Network, l: usize) -> Result<Batch> {
        if l == self.depth() && self.clamp == Clamp::Full {
            net.spec.output_nl.vjp(&self.pred[l], &self.err[l])
        } else {
            Ok(self.err[l].clone())
        }
    }

    /// `γ_L e_L + (ĥ_L − y)`, the gradient of the soft-clamp energy in `ĥ_L`.
    pub fn output_residual(&self, gammas: &GammaSchedule) -> Result<Batch> {
        let l_top = self.depth();
        let mut r = self.hhat[l_top].sub(&self.target)?;
        r.axpy(gammas.gamma[l_top], &self.err[l_top])?;
        Ok(r)
    }

    /// `mean(e_l²)` for every layer `1..=L` (index 0 is always 0).
    pub fn mean_sq_errors(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend(self.err[1..].iter().map(Mat::mean_sq));
        out
    }
}

/// Recomputes every prediction and error from the current `ĥ`.
pub fn refresh_errors(net: &Network, state: &mut ActivityState) -> Result<()> {
    for l in 1..=state.depth() {
        state.repredict(net, l)?;
    }
    for l in 1..=state.depth() {
        state.restamp_error(net, l)?;
    }
    state.preds_current = true;
    Ok(())
}

/// How the γ weights are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaMode {
    /// `γ_l = 1`, `γ^decay_l = 0`.
    Standard,
    /// User-supplied constants.
    Fixed,
    /// Recomputed from the state with per-matrix rates `alphas` and proximal
    /// step `beta`; valid for mini-batches of one sample.
    Theorem1 { alphas: Vec<f64>, beta: f64 },
}

/// Weights of the free-energy terms.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSchedule {
    pub mode: GammaMode,
    /// `γ_1..γ_L` (slot 0 unused).
    pub gamma: Vec<f64>,
    /// `γ^decay_1..γ^decay_{L-1}` (slot 0 unused).
    pub gamma_decay: Vec<f64>,
}

impl GammaSchedule {
    pub fn standard(depth: usize) -> Self {
        let mut gamma = vec![1.0; depth + 1];
        gamma[0] = 0.0;
        Self {
            mode: GammaMode::Standard,
            gamma,
            gamma_decay: vec![0.0; depth],
        }
    }

    /// Constant weights. `gamma` lists `γ_1..γ_L` and `gamma_decay` lists
    /// `γ^decay_1..γ^decay_{L-1}`.
    pub fn fixed(gamma: &[f64], gamma_decay: &[f64]) -> Result<Self> {
        if gamma.is_empty() || gamma_decay.len() + 1 != gamma.len() {
            return Err(PcError::InvalidConfig(format!(
                "need L output weights and L-1 decay weights, got {} and {}",
                gamma.len(),
                gamma_decay.len()
            )));
        }
        if gamma.iter().chain(gamma_decay).any(|&g| !(g >= 0.0)) {
            return Err(PcError::InvalidConfig("γ weights must be non-negative".into()));
        }
        let mut g = vec![0.0];
        g.extend_from_slice(gamma);
        let mut d = vec![0.0];
        d.extend_from_slice(gamma_decay);
        Ok(Self {
            mode: GammaMode::Fixed,
            gamma: g,
            gamma_decay: d,
        })
    }

    /// proximal γ weights evaluated at `state`. Norms include the constant
    /// bias input, since the bias column moves with the same update.
    pub fn theorem1(state: &ActivityState, alphas: &[f64], beta: f64) -> Result<Self> {
        let mut g = Self::theorem1_deferred(state.depth(), alphas, beta);
        g.refresh(state)?;
        Ok(g)
    }

    /// Proximal mode whose weights are filled in by the first
    /// [`GammaSchedule::refresh`], e.g. when inference begins.
    pub fn theorem1_deferred(depth: usize, alphas: &[f64], beta: f64) -> Self {
        Self {
            mode: GammaMode::Theorem1 {
                alphas: alphas.to_vec(),
                beta,
            },
            gamma: vec![0.0; depth + 1],
            gamma_decay: vec![0.0; depth],
        }
    }

    pub fn depth(&self) -> usize {
        self.gamma.len() - 1
    }

    /// Re-evaluates state-dependent weights; a no-op for constant modes.
    pub fn refresh(&mut self, state: &ActivityState) -> Result<()> {
        let GammaMode::Theorem1 { alphas, beta } = &self.mode else {
            return Ok(());
        };
        let l_top = state.depth();
        if state.batch_size() != 1 {
            return Err(PcError::BatchSizeOne {
                what: "the proximal γ schedule",
                got: state.batch_size(),
            });
        }
        if alphas.len() != l_top {
            return Err(PcError::InvalidConfig(format!(
                "need {l_top} learning rates, got {}",
                alphas.len()
            )));
        }
        if !(*beta > 0.0) {
            return Err(PcError::InvalidConfig(format!("beta must be positive, got {beta}")));
        }
        let aug_sq = |l: usize| state.act[l].sum_sq() + 1.0;
        for l in 1..l_top {
            self.gamma[l] = alphas[l - 1] * alphas[l - 1] * aug_sq(l - 1);
            self.gamma_decay[l] = alphas[l] * alphas[l] * state.err[l + 1].sum_sq();
        }
        self.gamma[l_top] = alphas[l_top - 1] * (1.0 / beta + aug_sq(l_top - 1)) - 1.0;
        Ok(())
    }

    /// The proximal schedule allows `γ_L < 0`; callers may want to warn about it.
    pub fn output_gamma_negative(&self) -> bool {
        self.gamma.last().is_some_and(|&g| g < 0.0)
    }
}

/// Mean over samples of `Σ γ_l ½‖e_l‖² + Σ γ^decay_l ½‖f(ĥ_l)‖²`, plus
/// `½‖y − ĥ_L‖²` under soft clamp. Predictions are recomputed from the
/// current `ĥ`, so stale stored errors do not matter.
pub fn free_energy(net: &Network, state: &ActivityState, gammas: &GammaSchedule) -> Result<f64> {
    let mut fresh = state.clone();
    fresh.record_reads = false;
    refresh_errors(net, &mut fresh)?;
    stored_free_energy(net, &fresh, gammas)
}

/// Free energy from the stored errors, without recomputing predictions.
pub fn stored_free_energy(net: &Network, state: &ActivityState, gammas: &GammaSchedule) -> Result<f64> {
    let l_top = state.depth();
    if gammas.depth() != l_top {
        return shape_err("free_energy", "γ schedule depth differs from the network");
    }
    let n = state.batch_size() as f64;
    let mut total = 0.0;
    for l in 1..=l_top {
        total += gammas.gamma[l] * 0.5 * state.err[l].sum_sq();
    }
    for l in 1..l_top {
        if gammas.gamma_decay[l] != 0.0 {
            total += gammas.gamma_decay[l] * 0.5 * apply_act(net.act(), &state.hhat[l]).sum_sq();
        }
    }
    let mut energy = total / n;
    if state.clamp == Clamp::Soft {
        energy += mse(&state.target, &state.hhat[l_top])?;
    }
    Ok(energy)
}

/// Per-sample `∂F/∂ĥ_l` for a hidden layer, from the stored errors:
/// `γ_l e_l − γ_{l+1} f'(ĥ_l) ⊙ W_l^T δ_{l+1} + γ^decay_l f'(ĥ_l) ⊙ f(ĥ_l)`.
/// Because `F` is a batch mean, the batch gradient is this divided by `N`.
pub fn energy_grad_hidden(net: &Network, state: &ActivityState, gammas: &GammaSchedule, l: usize) -> Result<Batch> {
    let l_top = state.depth();
    if l == 0 || l >= l_top {
        return Err(PcError::InvalidConfig(format!(
            "layer {l} is not a hidden layer of a depth-{l_top} network"
        )));
    }
    let fprime = apply_act_deriv(net.act(), &state.hhat[l]);
    let back = backproject(&net.params.weights[l], &state.delta(net, l + 1)?)?;
    let mut g = state.err[l].scale(gammas.gamma[l]);
    g.axpy(-gammas.gamma[l + 1], &fprime.hadamard(&back)?)?;
    if gammas.gamma_decay[l] != 0.0 {
        let decay = fprime.hadamard(&apply_act(net.act(), &state.hhat[l]))?;
        g.axpy(gammas.gamma_decay[l], &decay)?;
    }
    Ok(g)
}
