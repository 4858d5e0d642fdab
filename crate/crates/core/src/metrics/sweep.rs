//! Parameter sweeps over a base scenario.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{analyze, MetricsReport};
use crate::consensus::{run_simulation, Probability, SimScenario, Workload};
use crate::crypto::hash256;

/// The varied parameter and its values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NodeCount(Vec<usize>),
    DropProbability(Vec<Probability>),
    /// Transaction submissions per 1000 ticks; needs a generated workload.
    WorkloadRate(Vec<u64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::NodeCount(_) => "node_count",
            SweepAxis::DropProbability(_) => "drop_probability",
            SweepAxis::WorkloadRate(_) => "workload_rate",
        }
    }

    fn len(&self) -> usize {
        match self {
            SweepAxis::NodeCount(v) => v.len(),
            SweepAxis::DropProbability(v) => v.len(),
            SweepAxis::WorkloadRate(v) => v.len(),
        }
    }

    fn label(&self, i: usize) -> String {
        match self {
            SweepAxis::NodeCount(v) => v[i].to_string(),
            SweepAxis::DropProbability(v) => v[i].to_string(),
            SweepAxis::WorkloadRate(v) => v[i].to_string(),
        }
    }

    fn value_bytes(&self, i: usize) -> Vec<u8> {
        match self {
            SweepAxis::NodeCount(v) => (v[i] as u64).to_be_bytes().to_vec(),
            SweepAxis::DropProbability(v) => {
                [v[i].num.to_be_bytes(), v[i].den.to_be_bytes()].concat()
            }
            SweepAxis::WorkloadRate(v) => v[i].to_be_bytes().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: SimScenario,
    pub axis: SweepAxis,
    pub repetitions: u32,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SweepError {
    #[error("sweep axis has no values")]
    EmptyAxis,
    #[error("repetitions must be at least 1")]
    NoRepetitions,
}

impl SweepSpec {
    /// First 8 bytes (big-endian) of `hash256(base seed ‖ axis value ‖ repetition)`.
    pub fn derived_seed(&self, value: usize, rep: u32) -> u64 {
        let mut buf = self.base.seed.to_be_bytes().to_vec();
        buf.extend(self.axis.value_bytes(value));
        buf.extend(rep.to_be_bytes());
        let h = hash256(&buf);
        u64::from_be_bytes(h.0[..8].try_into().expect("8 bytes"))
    }

    fn scenario(&self, value: usize, rep: u32) -> Result<SimScenario, String> {
        let mut s = self.base.clone();
        s.seed = self.derived_seed(value, rep);
        match &self.axis {
            SweepAxis::NodeCount(v) => s.n_validators = v[value],
            SweepAxis::DropProbability(v) => s.drop_probability = v[value],
            SweepAxis::WorkloadRate(v) => {
                let rate = v[value];
                if rate == 0 {
                    return Err("workload rate must be positive".into());
                }
                match &mut s.workload {
                    Workload::Generated { interval_ticks, .. } => {
                        *interval_ticks = (1000 / rate).max(1)
                    }
                    Workload::Explicit { .. } => {
                        return Err("workload rate needs a generated workload".into())
                    }
                }
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub repetition: u32,
    pub seed: u64,
    /// `ok`, `truncated` or `error`.
    pub status: String,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

fn run_one(spec: &SweepSpec, value: usize, rep: u32) -> SweepRow {
    let seed = spec.derived_seed(value, rep);
    let mut row = SweepRow {
        axis: spec.axis.name().to_string(),
        value: spec.axis.label(value),
        repetition: rep,
        seed,
        status: "error".into(),
        report: None,
        error: None,
    };
    let result = spec
        .scenario(value, rep)
        .and_then(|s| run_simulation(&s).map_err(|e| e.to_string()))
        .and_then(|out| analyze(&out.trace).map_err(|e| e.to_string()));
    match result {
        Ok(report) => {
            row.status = if report.truncated { "truncated" } else { "ok" }.into();
            row.report = Some(report);
        }
        Err(e) => row.error = Some(e),
    }
    row
}

/// Rows come back in (value, repetition) order whatever the thread count.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, SweepError> {
    if spec.axis.len() == 0 {
        return Err(SweepError::EmptyAxis);
    }
    if spec.repetitions == 0 {
        return Err(SweepError::NoRepetitions);
    }
    let jobs: Vec<(usize, u32)> = (0..spec.axis.len())
        .flat_map(|v| (0..spec.repetitions).map(move |r| (v, r)))
        .collect();
    let threads = spec
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, jobs.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(v, r)) = jobs.get(i) else { break };
                let row = run_one(spec, v, r);
                slots.lock().expect("no poisoned workers")[i] = Some(row);
            });
        }
    });
    Ok(slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect())
}

pub const SWEEP_CSV_HEADER: [&str; 22] = [
    "axis",
    "value",
    "repetition",
    "seed",
    "status",
    "n_validators",
    "end_tick",
    "submitted",
    "committed",
    "uncommitted",
    "throughput",
    "latency_min",
    "latency_median",
    "latency_p95",
    "latency_max",
    "block_interval_mean",
    "messages_sent",
    "messages_dropped",
    "messages_blocked",
    "messages_lost",
    "state_bytes",
    "error",
];

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(SWEEP_CSV_HEADER).expect("in-memory write");
    for row in rows {
        let mut rec = vec![
            row.axis.clone(),
            row.value.clone(),
            row.repetition.to_string(),
            row.seed.to_string(),
            row.status.clone(),
        ];
        match &row.report {
            Some(r) => {
                let opt = |f: fn(&super::LatencySummary) -> u64| {
                    r.latency
                        .as_ref()
                        .map(f)
                        .map(|v| v.to_string())
                        .unwrap_or_default()
                };
                rec.extend([
                    r.n_validators.to_string(),
                    r.end_tick.to_string(),
                    r.submitted.to_string(),
                    r.committed.to_string(),
                    r.uncommitted.len().to_string(),
                    format!("{:.3}", r.throughput),
                    opt(|l| l.min),
                    opt(|l| l.median),
                    opt(|l| l.p95),
                    opt(|l| l.max),
                    format!("{:.3}", r.block_interval_mean),
                    r.messages_sent.to_string(),
                    r.messages_dropped.to_string(),
                    r.messages_blocked.to_string(),
                    r.messages_lost.to_string(),
                    r.state_bytes.to_string(),
                ]);
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 16)),
        }
        rec.push(row.error.clone().unwrap_or_default());
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
