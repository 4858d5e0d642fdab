use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::node::NodeStats;
use crate::crypto::Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SendOutcome {
    Scheduled,
    Dropped,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node: usize,
    pub crashed: bool,
    /// Height of the node's head block.
    pub height: u64,
    pub head: Digest,
    pub state_root: Digest,
    pub state_bytes: u64,
    pub stats: NodeStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Start {
        scenario: Digest,
        seed: u64,
        n_validators: usize,
        timeout_ticks: u64,
        max_ticks: u64,
        workload_txs: usize,
    },
    Submit {
        tick: u64,
        node: usize,
        tx: Digest,
        resubmit: bool,
    },
    Send {
        tick: u64,
        from: usize,
        to: usize,
        kind: String,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        height: Option<u64>,
        outcome: SendOutcome,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        deliver_at: Option<u64>,
    },
    /// Delivery to a crashed node.
    Lost {
        tick: u64,
        from: usize,
        to: usize,
        kind: String,
    },
    Crash {
        tick: u64,
        node: usize,
    },
    Commit {
        tick: u64,
        node: usize,
        height: u64,
        hash: Digest,
        txs: Vec<Digest>,
        state_root: Digest,
    },
    End {
        tick: u64,
        truncated: bool,
        conflicts: u64,
        nodes: Vec<NodeSummary>,
    },
}

/// The event log of one run. Serialized as one JSON object per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimTrace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum TraceParseError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SimTrace {
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Blank lines are skipped; line numbers are 1-based.
    pub fn from_ndjson(text: &str) -> Result<SimTrace, TraceParseError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(line).map_err(|e| TraceParseError::Line {
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(ev);
        }
        Ok(SimTrace { events })
    }

    pub fn truncated(&self) -> Option<bool> {
        self.events.iter().rev().find_map(|e| match e {
            TraceEvent::End { truncated, .. } => Some(*truncated),
            _ => None,
        })
    }
}
