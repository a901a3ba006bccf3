//! Training metrics and their CSV form.

use std::io::{Read, Write};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    /// A non-finite loss, gradient or weight appeared; training stopped.
    Diverged,
}

impl RunStatus {
    fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(RunStatus::Ok),
            "diverged" => Some(RunStatus::Diverged),
            _ => None,
        }
    }
}

/// One evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Mini-batches processed so far.
    pub iteration: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: Option<f64>,
    /// Mean `|ΔW_l|` per matrix since the previous record.
    pub mean_abs_update: Vec<f64>,
    pub status: RunStatus,
    /// Wall-clock milliseconds since training started; the only field that
    /// differs between identical runs.
    pub wall_ms: u64,
}

fn header(matrices: usize) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "iteration", "train_loss", "test_loss", "test_accuracy"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..matrices).map(|l| format!("dw_{l}")));
    h.push("status".into());
    h.push("wall_ms".into());
    h
}

pub fn write_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let matrices = records.first().map_or(0, |r| r.mean_abs_update.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(matrices))?;
    for r in records {
        if r.mean_abs_update.len() != matrices {
            return Err(HarnessError::Invalid(
                "records disagree on the number of matrices".into(),
            ));
        }
        let mut row = vec![
            r.epoch.to_string(),
            r.iteration.to_string(),
            r.train_loss.to_string(),
            r.test_loss.to_string(),
            r.test_accuracy.map(|a| a.to_string()).unwrap_or_default(),
        ];
        row.extend(r.mean_abs_update.iter().map(f64::to_string));
        row.push(r.status.as_str().into());
        row.push(r.wall_ms.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let matrices = headers.iter().filter(|h| h.starts_with("dw_")).count();
    let bad = |row: usize, detail: String| HarnessError::Invalid(format!("metrics row {row}: {detail}"));
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 7 + matrices {
            return Err(bad(i + 1, format!("{} fields, expected {}", rec.len(), 7 + matrices)));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad number '{}'", &rec[k])))
        };
        let int = |k: usize| -> Result<u64> {
            rec[k]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad integer '{}'", &rec[k])))
        };
        records.push(MetricsRecord {
            epoch: int(0)? as usize,
            iteration: int(1)? as usize,
            train_loss: num(2)?,
            test_loss: num(3)?,
            test_accuracy: if rec[4].is_empty() { None } else { Some(num(4)?) },
            mean_abs_update: (0..matrices).map(|l| num(5 + l)).collect::<Result<_>>()?,
            status: RunStatus::parse(&rec[5 + matrices])
                .ok_or_else(|| bad(i + 1, format!("bad status '{}'", &rec[5 + matrices])))?,
            wall_ms: int(6 + matrices)?,
        });
    }
    Ok(records)
}
