//! The training loop.

use std::time::Instant;

use pclab_core::diagnostics::UpdateLog;
use pclab_core::math::Mat;
use pclab_core::optim::{training_grads, Optimizer};
use pclab_core::pcn::{Network, Params};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::data::{argmax, init_params, Dataset};
use crate::error::{HarnessError, Result};
use crate::metrics::{MetricsRecord, RunStatus};

const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub params: Params,
    pub updates: UpdateLog,
    pub status: RunStatus,
    pub iterations: usize,
    /// Optimizer state at the end, e.g. MQ's running magnitudes.
    pub optimizer: Optimizer,
}

impl TrainOutcome {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("the initial evaluation is always recorded")
    }
}

/// Mean loss and, for labeled data, accuracy.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<(f64, Option<f64>)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let rows: Vec<usize> = (start..(start + EVAL_CHUNK).min(data.len())).collect();
        let part = data.subset(&rows);
        let out = net.predict(&part.x)?;
        loss += pclab_core::math::mse(&part.y, &out)? * rows.len() as f64;
        if let Some(labels) = &part.labels {
            correct += labels
                .iter()
                .enumerate()
                .filter(|&(i, &c)| argmax(out.row(i)) == c)
                .count();
        }
    }
    let n = data.len() as f64;
    Ok((loss / n, data.labels.as_ref().map(|_| correct as f64 / n)))
}

/// Trains from [`init_params`] with the configured seed. Every epoch ends
/// with an evaluation record; `on_record` sees each one as it is made.
pub fn train_with(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    mut on_record: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() || test.is_empty() {
        return Err(HarnessError::Invalid(
            "training and test splits must both be non-empty".into(),
        ));
    }
    let spec = cfg.spec()?;
    let mut net = Network::new(spec.clone(), init_params(&spec, cfg.seed))?;
    let matrices = net.depth();
    let mut optimizer = Optimizer::new(cfg.optimizer, &net.params, cfg.rates.resolve(matrices)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let started = Instant::now();

    let mut updates = UpdateLog::new(matrices, cfg.warmup);
    let mut window = vec![0.0; matrices];
    let mut window_len = 0usize;
    let mut records = Vec::new();
    let mut iteration = 0usize;
    let limit = cfg.max_iterations.unwrap_or(usize::MAX);

    let mut emit = |net: &Network,
                    epoch: usize,
                    iteration: usize,
                    window: &mut Vec<f64>,
                    window_len: &mut usize,
                    forced: Option<RunStatus>|
     -> Result<RunStatus> {
        let (train_loss, _) = evaluate(net, train)?;
        let (test_loss, test_accuracy) = evaluate(net, test)?;
        let status = forced.unwrap_or(if train_loss.is_finite() && test_loss.is_finite() {
            RunStatus::Ok
        } else {
            RunStatus::Diverged
        });
        let n = (*window_len).max(1) as f64;
        let rec = MetricsRecord {
            epoch,
            iteration,
            train_loss,
            test_loss,
            test_accuracy,
            mean_abs_update: window.iter().map(|s| s / n).collect(),
            status,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        on_record(&rec);
        records.push(rec);
        window.iter_mut().for_each(|s| *s = 0.0);
        *window_len = 0;
        Ok(status)
    };

    let mut status = emit(&net, 0, 0, &mut window, &mut window_len, None)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        if status != RunStatus::Ok || iteration >= limit {
            break;
        }
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if iteration >= limit {
                status = emit(&net, epoch, iteration, &mut window, &mut window_len, None)?;
                break 'epochs;
            }
            let batch = train.subset(chunk);
            let grads = training_grads(
                &net,
                &batch.x,
                &batch.y,
                cfg.algorithm,
                cfg.iterations,
                cfg.epsilon,
                cfg.clamp,
            )?;
            iteration += 1;
            let before = net.params.clone();
            if grads.is_finite() {
                optimizer.step(&mut net.params, &grads)?;
            }
            if !grads.is_finite() || !net.params.is_finite() {
                status = emit(
                    &net,
                    epoch,
                    iteration,
                    &mut window,
                    &mut window_len,
                    Some(RunStatus::Diverged),
                )?;
                break 'epochs;
            }
            let deltas: Vec<Mat> = net
                .params
                .weights
                .iter()
                .zip(&before.weights)
                .map(|(a, b)| a.sub(b))
                .collect::<pclab_core::Result<_>>()?;
            updates.record(&deltas);
            for (s, d) in window.iter_mut().zip(&deltas) {
                *s += d.mean_abs();
            }
            window_len += 1;
        }
        status = emit(&net, epoch, iteration, &mut window, &mut window_len, None)?;
    }

    Ok(TrainOutcome {
        records,
        params: net.params,
        updates,
        status,
        iterations: iteration,
        optimizer,
    })
}

pub fn train(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutcome> {
    train_with(cfg, train, test, |_| {})
}
