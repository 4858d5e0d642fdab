//! Run statistics computed from a simulation trace.

mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{NodeStats, SendOutcome, SimTrace, TraceEvent, TraceParseError};
use crate::crypto::Digest;

pub use sweep::{
    run_sweep, sweep_csv, SweepAxis, SweepError, SweepRow, SweepSpec, SWEEP_CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Parse(#[from] TraceParseError),
    #[error("trace has no start event")]
    MissingStart,
    #[error("trace has no end event")]
    MissingEnd,
}

/// Nearest-rank summary of per-transaction latencies, in ticks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub min: u64,
    pub median: u64,
    pub p95: u64,
    pub max: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxLatency {
    pub tx: Digest,
    pub submitted: u64,
    pub committed: u64,
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: usize,
    pub crashed: bool,
    pub height: u64,
    pub commits: u64,
    pub messages_sent: u64,
    pub state_bytes: u64,
    pub stats: NodeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Digest,
    pub seed: u64,
    pub n_validators: usize,
    pub truncated: bool,
    pub conflicts: u64,
    pub end_tick: u64,
    pub submitted: u64,
    pub committed: u64,
    /// Submitted but never committed anywhere.
    pub uncommitted: Vec<Digest>,
    /// Committed transactions per 1000 ticks.
    pub throughput: f64,
    /// `None` when nothing committed.
    pub latency: Option<LatencySummary>,
    pub latencies: Vec<TxLatency>,
    pub blocks: u64,
    /// Mean ticks between successive first commits of each height, counted from tick 0.
    pub block_interval_mean: f64,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub messages_blocked: u64,
    pub messages_lost: u64,
    /// Largest serialized state among live nodes at the end of the run.
    pub state_bytes: u64,
    pub nodes: Vec<NodeMetrics>,
}

/// Value at rank `ceil(num/den * len)` of a sorted slice.
pub fn nearest_rank(sorted: &[u64], num: u64, den: u64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let len = sorted.len() as u64;
    let rank = (num * len).div_ceil(den).max(1);
    Some(sorted[(rank - 1) as usize])
}

pub fn analyze_ndjson(text: &str) -> Result<MetricsReport, MetricsError> {
    analyze(&SimTrace::from_ndjson(text)?)
}

pub fn analyze(trace: &SimTrace) -> Result<MetricsReport, MetricsError> {
    let (scenario, seed, n) = trace
        .events
        .iter()
        .find_map(|e| match e {
            TraceEvent::Start {
                scenario,
                seed,
                n_validators,
                ..
            } => Some((*scenario, *seed, *n_validators)),
            _ => None,
        })
        .ok_or(MetricsError::MissingStart)?;
    let (end_tick, truncated, conflicts, summaries) = trace
        .events
        .iter()
        .rev()
        .find_map(|e| match e {
            TraceEvent::End {
                tick,
                truncated,
                conflicts,
                nodes,
            } => Some((*tick, *truncated, *conflicts, nodes)),
            _ => None,
        })
        .ok_or(MetricsError::MissingEnd)?;

    // First submission and first commit per transaction, in submission order.
    let mut order: Vec<Digest> = Vec::new();
    let mut first_submit: BTreeMap<Digest, u64> = BTreeMap::new();
    let mut first_commit: BTreeMap<Digest, u64> = BTreeMap::new();
    let mut height_commit: BTreeMap<u64, u64> = BTreeMap::new();
    let mut commits = vec![0u64; n];
    let mut sent = vec![0u64; n];
    let (mut dropped, mut blocked, mut lost) = (0, 0, 0);
    for ev in &trace.events {
        match ev {
            TraceEvent::Submit { tick, tx, .. } => {
                if !first_submit.contains_key(tx) {
                    first_submit.insert(*tx, *tick);
                    order.push(*tx);
                }
            }
            TraceEvent::Commit {
                tick,
                node,
                height,
                txs,
                ..
            } => {
                if let Some(c) = commits.get_mut(*node) {
                    *c += 1;
                }
                height_commit.entry(*height).or_insert(*tick);
                for tx in txs {
                    first_commit.entry(*tx).or_insert(*tick);
                }
            }
            TraceEvent::Send { from, outcome, .. } => {
                if let Some(s) = sent.get_mut(*from) {
                    *s += 1;
                }
                match outcome {
                    SendOutcome::Dropped => dropped += 1,
                    SendOutcome::Blocked => blocked += 1,
                    SendOutcome::Scheduled => {}
                }
            }
            TraceEvent::Lost { .. } => lost += 1,
            _ => {}
        }
    }

    let mut latencies = Vec::new();
    let mut uncommitted = Vec::new();
    for tx in &order {
        let submitted = first_submit[tx];
        match first_commit.get(tx) {
            Some(&c) if c >= submitted => latencies.push(TxLatency {
                tx: *tx,
                submitted,
                committed: c,
                ticks: c - submitted,
            }),
            _ => uncommitted.push(*tx),
        }
    }
    let mut ticks: Vec<u64> = latencies.iter().map(|l| l.ticks).collect();
    ticks.sort_unstable();
    let latency = (!ticks.is_empty()).then(|| LatencySummary {
        min: ticks[0],
        median: nearest_rank(&ticks, 1, 2).expect("non-empty"),
        p95: nearest_rank(&ticks, 95, 100).expect("non-empty"),
        max: ticks[ticks.len() - 1],
    });

    let committed = latencies.len() as u64;
    let throughput = if end_tick == 0 {
        0.0
    } else {
        committed as f64 * 1000.0 / end_tick as f64
    };
    let blocks = height_commit.len() as u64;
    let block_interval_mean = match height_commit.values().max() {
        Some(&last) => last as f64 / blocks as f64,
        None => 0.0,
    };

    let nodes: Vec<NodeMetrics> = summaries
        .iter()
        .map(|s| NodeMetrics {
            node: s.node,
            crashed: s.crashed,
            height: s.height,
            commits: commits.get(s.node).copied().unwrap_or(0),
            messages_sent: sent.get(s.node).copied().unwrap_or(0),
            state_bytes: s.state_bytes,
            stats: s.stats.clone(),
        })
        .collect();
    let state_bytes = summaries
        .iter()
        .filter(|s| !s.crashed)
        .map(|s| s.state_bytes)
        .max()
        .unwrap_or(0);

    Ok(MetricsReport {
        scenario,
        seed,
        n_validators: n,
        truncated,
        conflicts,
        end_tick,
        submitted: order.len() as u64,
        committed,
        uncommitted,
        throughput,
        latency,
        latencies,
        blocks,
        block_interval_mean,
        messages_sent: sent.iter().sum(),
        messages_dropped: dropped,
        messages_blocked: blocked,
        messages_lost: lost,
        state_bytes,
        nodes,
    })
}
