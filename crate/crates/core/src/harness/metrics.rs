use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Cadence,
    /// Last step of a task.
    BeforeSwitch,
    /// First step of the next task.
    AfterSwitch,
    Final,
}

/// Light metrics at one step. `step` counts completed optimizer updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub task: usize,
    pub kind: RecordKind,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub dead_fraction: f64,
    pub zombie_fraction: f64,
    pub param_norm: f64,
    /// `(layer, norm)` over all parameters of each layer.
    pub layer_norms: Vec<(usize, f64)>,
    pub entropy: Option<f64>,
    pub diverged: bool,
    /// Id of the heavy diagnostics taken at this step, if any.
    pub heavy: Option<u64>,
}

/// A JSONL record `{step, kind, payload}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeavyRecord {
    pub step: u64,
    pub kind: String,
    pub payload: serde_json::Value,
}

impl HeavyRecord {
    pub fn new(step: u64, kind: &str, payload: &impl Serialize) -> Result<Self> {
        Ok(Self {
            step,
            kind: kind.into(),
            payload: serde_json::to_value(payload)?,
        })
    }
}

/// Receives metrics as a run progresses.
pub trait MetricSink {
    fn record(&mut self, record: &MetricRecord) -> Result<()>;
    fn heavy(&mut self, record: &HeavyRecord) -> Result<()>;
    /// Called after the paired records of every task boundary and at the end.
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

/// In-memory metric log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    pub records: Vec<MetricRecord>,
    pub heavy: Vec<HeavyRecord>,
}

impl MetricLog {
    pub fn diverged(&self) -> bool {
        self.records.last().is_some_and(|r| r.diverged)
    }

    /// `(before, after)` record pairs around each task switch.
    pub fn boundaries(&self) -> Vec<(&MetricRecord, &MetricRecord)> {
        self.records
            .windows(2)
            .filter(|w| w[0].kind == RecordKind::BeforeSwitch && w[1].kind == RecordKind::AfterSwitch)
            .map(|w| (&w[0], &w[1]))
            .collect()
    }

    /// Last record of each task.
    pub fn task_finals(&self) -> Vec<&MetricRecord> {
        let mut out: Vec<&MetricRecord> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some(last) if last.task == r.task => *last = r,
                _ => out.push(r),
            }
        }
        out
    }
}

impl MetricSink for MetricLog {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::invalid(format!(
                    "metric step {} not after previous step {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record.clone());
        Ok(())
    }

    fn heavy(&mut self, record: &HeavyRecord) -> Result<()> {
        self.heavy.push(record.clone());
        Ok(())
    }
}

/// Forwards every event to two sinks.
pub struct Tee<'a, A: ?Sized, B: ?Sized>(pub &'a mut A, pub &'a mut B);

impl<A: MetricSink + ?Sized, B: MetricSink + ?Sized> MetricSink for Tee<'_, A, B> {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        self.0.record(record)?;
        self.1.record(record)
    }

    fn heavy(&mut self, record: &HeavyRecord) -> Result<()> {
        self.0.heavy(record)?;
        self.1.heavy(record)
    }

    fn flush(&mut self) -> Result<()> {
        self.0.flush()?;
        self.1.flush()
    }
}
