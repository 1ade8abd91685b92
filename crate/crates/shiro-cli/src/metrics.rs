//! Metrics stream: one JSON object per line, flushed on write, with strictly
//! increasing `step` values.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::TrainError;

/// One evaluation checkpoint's worth of metrics.
///
/// `wall_time_s` is the only field that is not a pure function of the seed;
/// determinism comparisons skip it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub step: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub kl_mean: f64,
    pub kl_max: f64,
    pub alpha_high: f64,
    pub alpha_low: f64,
    pub critic_loss_high: f64,
    pub critic_loss_low: f64,
    pub actor_loss_high: f64,
    pub actor_loss_low: f64,
    pub wall_time_s: f64,
}

impl MetricsRecord {
    /// Equality on everything the seed determines.
    pub fn same_modulo_wall_time(&self, other: &Self) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        a == b
    }
}

/// JSONL sink enforcing `step` monotonicity.
pub struct MetricsWriter<W: Write> {
    out: W,
    last_step: Option<u64>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, last_step: None }
    }

    /// Restores the monotonicity watermark when resuming a run.
    pub fn with_watermark(out: W, last_step: Option<u64>) -> Self {
        Self { out, last_step }
    }

    pub fn emit(&mut self, record: &MetricsRecord) -> Result<(), TrainError> {
        if let Some(last) = self.last_step {
            if record.step <= last {
                return Err(TrainError::Other(format!(
                    "metrics step {} is not after {last}",
                    record.step
                )));
            }
        }
        let line = serde_json::to_string(record)
            .map_err(|e| TrainError::Other(format!("metrics serialization: {e}")))?;
        writeln!(self.out, "{line}").map_err(|e| TrainError::Other(format!("metrics write: {e}")))?;
        self.out
            .flush()
            .map_err(|e| TrainError::Other(format!("metrics flush: {e}")))?;
        self.last_step = Some(record.step);
        Ok(())
    }
}

/// Parses a metrics JSONL stream back into records.
pub fn read_metrics<R: BufRead>(input: R) -> Result<Vec<MetricsRecord>, TrainError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| TrainError::Other(format!("metrics read: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricsRecord = serde_json::from_str(&line)
            .map_err(|e| TrainError::Other(format!("metrics line {}: {e}", i + 1)))?;
        records.push(record);
    }
    Ok(records)
}
