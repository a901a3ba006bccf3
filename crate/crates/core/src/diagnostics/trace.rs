//! Per-iteration error traces and weight-update magnitude logs.

use crate::error::{PcError, Result};
use crate::inference::{begin, step, InferenceConfig};
use crate::math::{Batch, Mat};
use crate::pcn::{refresh_errors, GammaSchedule, Network};

/// `rows[t][l]` is `mean(e_l²)` after `t` inference iterations, for layers
/// `1..=L` (column 0 is always zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTrace {
    pub rows: Vec<Vec<f64>>,
}

impl ErrorTrace {
    pub fn at(&self, t: usize, l: usize) -> f64 {
        self.rows[t][l]
    }
}

/// Runs inference and records every layer's mean squared error after each
/// iteration, errors recomputed from the activities at that point.
pub fn error_trace(
    net: &Network,
    x: &Batch,
    y: &Batch,
    cfg: &InferenceConfig,
    gammas: &GammaSchedule,
) -> Result<ErrorTrace> {
    let mut gammas = gammas.clone();
    let mut state = begin(net, x, y, cfg.clamp, &mut gammas)?;
    let snapshot = |s: &crate::pcn::ActivityState| -> Result<Vec<f64>> {
        let mut fresh = s.clone();
        refresh_errors(net, &mut fresh)?;
        Ok(fresh.mean_sq_errors())
    };
    let mut rows = vec![snapshot(&state)?];
    for _ in 0..cfg.iterations {
        step(net, &mut state, cfg, &mut gammas)?;
        rows.push(snapshot(&state)?);
    }
    Ok(ErrorTrace { rows })
}

/// Running per-matrix sums of `mean|ΔW|`, skipping a warm-up prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateLog {
    pub warmup: usize,
    seen: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl UpdateLog {
    pub fn new(matrices: usize, warmup: usize) -> Self {
        Self {
            warmup,
            seen: 0,
            sums: vec![0.0; matrices],
            counts: vec![0; matrices],
        }
    }

    /// Records one training iteration's weight changes.
    pub fn record(&mut self, deltas: &[Mat]) {
        self.seen += 1;
        if self.seen <= self.warmup {
            return;
        }
        for (i, d) in deltas.iter().enumerate().take(self.sums.len()) {
            self.sums[i] += d.mean_abs();
            self.counts[i] += 1;
        }
    }

    /// Pools another run (another seed) into this log.
    pub fn merge(&mut self, other: &UpdateLog) {
        for (i, (s, c)) in other.sums.iter().zip(&other.counts).enumerate() {
            self.sums[i] += s;
            self.counts[i] += c;
        }
        self.seen += other.seen;
    }

    /// Records that survived the warm-up skip, per matrix.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

/// Mean over entries, recorded iterations and pooled runs of `|ΔW_l|`.
pub fn update_magnitude_stats(log: &UpdateLog) -> Result<Vec<f64>> {
    if log.counts.is_empty() || log.counts.contains(&0) {
        return Err(PcError::EmptyLog);
    }
    Ok(log.sums.iter().zip(&log.counts).map(|(s, &c)| s / c as f64).collect())
}

/// `max / min` of per-matrix magnitudes.
pub fn spread_ratio(magnitudes: &[f64]) -> f64 {
    let hi = magnitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = magnitudes.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}
