//! The `diagnose` and `gradcheck` subcommands. Each returns a small table
//! that the CLI writes as CSV.

use std::io::Write;

use pclab_core::diagnostics::{
    error_trace, implicit_sgd_oracle, lemma1_check, newton_update, param_step, prox_trace_during_inference, rel_err,
    GRAD_STEP,
};
use pclab_core::inference::{begin, infer, InferenceConfig, Schedule};
use pclab_core::math::Batch;
use pclab_core::optim::{bp_grads, energy_weight_grads, Algorithm};
use pclab_core::pcn::{energy_grad_hidden, free_energy, Clamp, GammaSchedule, Network};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::data::{init_params, Dataset};
use crate::error::{HarnessError, Result};
use crate::train::train;

/// Relative-error bound of `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-5;
/// Below this magnitude gradients are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-5;
const COORDS_PER_BLOCK: usize = 32;
/// The Newton-step check builds a dense finite-difference Hessian.
const MAX_HESSIAN_PARAMS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn initial_net(cfg: &ExperimentConfig) -> Result<Network> {
    let spec = cfg.spec()?;
    Ok(Network::new(spec.clone(), init_params(&spec, cfg.seed))?)
}

fn first_rows(data: &Dataset, n: usize) -> Dataset {
    let rows: Vec<usize> = (0..n.min(data.len())).collect();
    data.subset(&rows)
}

fn schedule_of(cfg: &ExperimentConfig) -> Schedule {
    cfg.algorithm.schedule().unwrap_or(Schedule::Simultaneous)
}

/// Trains as configured, then traces the proximal objective while
/// inference runs on the first training mini-batch.
pub fn prox(cfg: &ExperimentConfig) -> Result<Table> {
    if cfg.algorithm == Algorithm::Bp {
        return Err(HarnessError::Invalid(
            "the proximal trace needs algorithm il or seqil".into(),
        ));
    }
    let (train_set, test_set) = cfg.load_data()?;
    let outcome = train(cfg, &train_set, &test_set)?;
    let net = Network::new(cfg.spec()?, outcome.params)?;
    let batch = first_rows(&train_set, cfg.batch_size);
    let inference = InferenceConfig::new(cfg.iterations, cfg.epsilon, schedule_of(cfg), cfg.clamp)?;
    let gammas = GammaSchedule::standard(net.depth());
    let (trace, _) = prox_trace_during_inference(
        &net,
        &batch.x,
        &batch.y,
        &inference,
        &gammas,
        &outcome.optimizer,
        cfg.beta,
    )?;
    let mut t = Table::new(&["t", "prox"]);
    for (i, v) in trace.values.iter().enumerate() {
        t.push(vec![i.to_string(), v.to_string()]);
    }
    Ok(t)
}

fn single_sample(cfg: &ExperimentConfig) -> Result<(Network, Batch, Batch)> {
    let (train_set, _) = cfg.load_data()?;
    let s = first_rows(&train_set, 1);
    Ok((initial_net(cfg)?, s.x, s.y))
}

/// gradient proportionality on the first training sample after `T`
/// simultaneous iterations under the proximal γ weights (soft clamp).
pub fn lemma1(cfg: &ExperimentConfig) -> Result<Table> {
    let (net, x, y) = single_sample(cfg)?;
    let alphas = cfg.rates.resolve(net.depth())?;
    if net.depth() < 3 {
        return Err(HarnessError::Invalid(
            "the proportionality check needs at least two hidden layers".into(),
        ));
    }
    let mut gammas = GammaSchedule::theorem1_deferred(net.depth(), &alphas, cfg.beta);
    let mut state = begin(&net, &x, &y, Clamp::Soft, &mut gammas)?;
    let inference = InferenceConfig::new(cfg.iterations, cfg.epsilon, Schedule::Simultaneous, Clamp::Soft)?;
    infer(&net, &mut state, &inference, &mut gammas)?;
    let mut t = Table::new(&["layer", "constant", "expected", "rel_spread", "inconclusive"]);
    for l in 1..=net.depth() - 2 {
        let r = lemma1_check(&net, &state, &alphas, cfg.beta, l)?;
        t.push(vec![
            l.to_string(),
            r.constant.to_string(),
            (1.0 / cfg.beta).to_string(),
            r.rel_spread.to_string(),
            r.inconclusive.to_string(),
        ]);
    }
    Ok(t)
}

/// `‖oracle step − Newton step‖` for `β` halved `halvings` times.
pub fn theorem2(cfg: &ExperimentConfig) -> Result<Table> {
    let (net, x, y) = single_sample(cfg)?;
    let p = net.spec.param_count();
    if p > MAX_HESSIAN_PARAMS {
        return Err(HarnessError::Invalid(format!(
            "{p} parameters; the Newton comparison is limited to {MAX_HESSIAN_PARAMS}"
        )));
    }
    let mut t = Table::new(&["beta", "error", "ratio"]);
    let mut prev: Option<f64> = None;
    for k in 0..=cfg.halvings {
        let beta = cfg.beta / 2f64.powi(k as i32);
        let oracle = implicit_sgd_oracle(&net, &x, &y, beta, 1e-9)?;
        let newton = newton_update(&net, &x, &y, beta)?.flatten();
        let err = param_step(&oracle, &net.params)
            .iter()
            .zip(&newton)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let ratio = prev.map_or(String::new(), |p| (err / p).to_string());
        t.push(vec![beta.to_string(), err.to_string(), ratio]);
        prev = Some(err);
    }
    Ok(t)
}

/// Per-layer `mean(e_l²)` after each inference iteration on the first
/// training mini-batch.
pub fn error_trace_table(cfg: &ExperimentConfig) -> Result<Table> {
    let (train_set, _) = cfg.load_data()?;
    let batch = first_rows(&train_set, cfg.batch_size);
    let net = initial_net(cfg)?;
    let inference = InferenceConfig::new(cfg.iterations, cfg.epsilon, schedule_of(cfg), cfg.clamp)?;
    let trace = error_trace(
        &net,
        &batch.x,
        &batch.y,
        &inference,
        &GammaSchedule::standard(net.depth()),
    )?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=net.depth()).map(|l| format!("e_{l}")));
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for (i, row) in trace.rows.iter().enumerate() {
        let mut r = vec![i.to_string()];
        r.extend(row[1..].iter().map(f64::to_string));
        t.push(r);
    }
    Ok(t)
}

/// Central differences on a sampled subset of coordinates.
fn sampled_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], coords: &[usize]) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + GRAD_STEP;
            let up = f(&probe);
            probe[i] = orig - GRAD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * GRAD_STEP)
        })
        .collect()
}

fn pick(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    if len <= COORDS_PER_BLOCK {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, COORDS_PER_BLOCK).into_vec();
        v.sort_unstable();
        v
    }
}

fn worst(analytic: &[f64], numeric: &[f64], coords: &[usize]) -> f64 {
    coords
        .iter()
        .zip(numeric)
        .map(|(&i, &n)| rel_err(analytic[i], n, GRADCHECK_FLOOR))
        .fold(0.0, f64::max)
}

/// Analytic activity, weight and backpropagation gradients against central
/// differences on up to eight training samples, after `T` iterations of the
/// configured schedule. At most 32 coordinates per block are probed.
pub fn gradcheck(cfg: &ExperimentConfig) -> Result<(Table, bool)> {
    let (train_set, _) = cfg.load_data()?;
    let batch = first_rows(&train_set, cfg.batch_size.min(8));
    let net = initial_net(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gammas = GammaSchedule::standard(net.depth());
    let mut g = gammas.clone();
    let mut state = begin(&net, &batch.x, &batch.y, cfg.clamp, &mut g)?;
    let inference = InferenceConfig::new(cfg.iterations, cfg.epsilon, schedule_of(cfg), cfg.clamp)?;
    infer(&net, &mut state, &inference, &mut g)?;
    pclab_core::pcn::refresh_errors(&net, &mut state)?;

    let mut t = Table::new(&["check", "block", "coordinates", "max_rel_err", "pass"]);
    let mut all_pass = true;
    let mut row = |check: &str, block: usize, n: usize, err: f64| {
        let pass = err < GRADCHECK_TOL;
        all_pass &= pass;
        t.push(vec![
            check.into(),
            block.to_string(),
            n.to_string(),
            err.to_string(),
            pass.to_string(),
        ]);
    };

    let n = state.batch_size() as f64;
    for l in 1..net.depth() {
        let analytic = energy_grad_hidden(&net, &state, &gammas, l)?.into_vec();
        let coords = pick(&mut rng, analytic.len());
        let numeric = sampled_fd(
            |v| {
                let mut s = state.clone();
                s.hhat[l].data_mut().copy_from_slice(v);
                n * free_energy(&net, &s, &gammas).unwrap_or(f64::NAN)
            },
            state.hhat[l].data(),
            &coords,
        );
        row("activity", l, coords.len(), worst(&analytic, &numeric, &coords));
    }

    let energy = energy_weight_grads(&net, &state, &gammas)?;
    let bp = bp_grads(&net, &batch.x, &batch.y)?;
    for (k, (eg, bg)) in energy.grads.iter().zip(&bp.grads).enumerate() {
        let coords = pick(&mut rng, eg.data().len());
        let with_matrix = |v: &[f64]| {
            let mut p = net.params.clone();
            p.weights[k].data_mut().copy_from_slice(v);
            net.with_params(p).expect("shapes preserved")
        };
        let w = net.params.weights[k].data();
        let numeric = sampled_fd(
            |v| free_energy(&with_matrix(v), &state, &gammas).unwrap_or(f64::NAN),
            w,
            &coords,
        );
        row("weight", k, coords.len(), worst(eg.data(), &numeric, &coords));
        let numeric = sampled_fd(
            |v| with_matrix(v).loss(&batch.x, &batch.y).unwrap_or(f64::NAN),
            w,
            &coords,
        );
        row("backprop", k, coords.len(), worst(bg.data(), &numeric, &coords));
    }
    Ok((t, all_pass))
}
