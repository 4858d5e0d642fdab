//! Deterministic discrete-event network simulator.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::message::ConsensusMessage;
use super::node::{Node, NodeConfig, Outbound};
use super::scenario::{validator_key, ScenarioError, SimScenario};
use super::trace::{NodeSummary, SendOutcome, SimTrace, TraceEvent};
use crate::block::{genesis_block, Block, ValidatorSet, Vote};
use crate::crypto::{hash_concat, Digest, KeyRegistry, Keypair};
use crate::tx::Transaction;
use crate::vm::WorldState;

/// A run's trace plus the final node states for inspection.
pub struct SimOutcome {
    pub trace: SimTrace,
    pub nodes: Vec<Node>,
    pub crashed: Vec<bool>,
    pub validators: ValidatorSet,
    pub registry: KeyRegistry,
    pub genesis_state: WorldState,
    /// Transactions of the workload, in submission order.
    pub workload: Vec<Transaction>,
    /// `(height, first hash seen, conflicting hash)`.
    pub conflicts: Vec<(u64, Digest, Digest)>,
    pub truncated: bool,
}

impl SimOutcome {
    pub fn live_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes
            .iter()
            .zip(&self.crashed)
            .filter(|(_, c)| !**c)
            .map(|(n, _)| n)
    }
}

/// Genesis block signed by every validator.
pub fn signed_genesis(state: &WorldState, keys: &[Keypair]) -> Block {
    let mut g = genesis_block(state.root(), keys[0].address());
    let hash = g.hash();
    g.votes = keys.iter().map(|k| Vote::sign(&hash, k)).collect();
    g
}

struct Pending {
    tx: Transaction,
    last_tick: u64,
    last_node: usize,
}

struct Sim {
    nodes: Vec<Node>,
    crashed: Vec<bool>,
    rng: ChaCha8Rng,
    queue: BTreeMap<(u64, usize, u64), (usize, ConsensusMessage)>,
    seq: u64,
    trace: Vec<TraceEvent>,
    first_commit: BTreeMap<u64, Digest>,
    conflicts: Vec<(u64, Digest, Digest)>,
    workload_hashes: BTreeSet<Digest>,
    committed_anywhere: BTreeSet<Digest>,
    committed_per_node: Vec<usize>,
}

impl Sim {
    fn next_live(&self, start: usize) -> Option<usize> {
        let n = self.nodes.len();
        (0..n).map(|k| (start + k) % n).find(|&i| !self.crashed[i])
    }

    fn send(&mut self, sc: &SimScenario, tick: u64, from: usize, outs: Vec<Outbound>) {
        let n = self.nodes.len();
        for o in outs {
            let (targets, msg): (Vec<usize>, ConsensusMessage) = match o {
                Outbound::Broadcast(m) => ((0..n).filter(|&j| j != from).collect(), m),
                Outbound::To(j, m) => (vec![j], m),
            };
            for to in targets {
                let blocked = sc
                    .partitions
                    .iter()
                    .any(|p| p.active(tick) && p.separates(from, to));
                let (outcome, deliver_at) = if blocked {
                    (SendOutcome::Blocked, None)
                } else if self.rng.gen_range(0..sc.drop_probability.den) < sc.drop_probability.num {
                    (SendOutcome::Dropped, None)
                } else {
                    let at = tick + self.rng.gen_range(sc.latency.min..=sc.latency.max);
                    (SendOutcome::Scheduled, Some(at))
                };
                self.trace.push(TraceEvent::Send {
                    tick,
                    from,
                    to,
                    kind: msg.kind().to_string(),
                    height: msg.height(),
                    outcome,
                    deliver_at,
                });
                if let Some(at) = deliver_at {
                    self.seq += 1;
                    self.queue.insert((at, to, self.seq), (from, msg.clone()));
                }
            }
        }
    }

    fn record_commits(&mut self, tick: u64, node: usize) {
        for height in self.nodes[node].take_new_commits() {
            let block = &self.nodes[node].chain()[height as usize];
            let hash = block.hash();
            let txs = block.tx_hashes();
            let first = *self.first_commit.entry(height).or_insert(hash);
            if first != hash {
                self.conflicts.push((height, first, hash));
            }
            for h in &txs {
                if self.workload_hashes.contains(h) {
                    self.committed_anywhere.insert(*h);
                    self.committed_per_node[node] += 1;
                }
            }
            self.trace.push(TraceEvent::Commit {
                tick,
                node,
                height,
                hash,
                txs,
                state_root: block.header.state_root,
            });
        }
    }
}

/// Runs `scenario` to completion of its workload or to `max_ticks`.
pub fn run_simulation(scenario: &SimScenario) -> Result<SimOutcome, ScenarioError> {
    scenario.validate()?;
    let n = scenario.n_validators;
    let work = scenario.workload.materialize(scenario.seed);
    let registry: KeyRegistry = work.accounts.iter().map(|a| a.public_key).collect();
    for (i, t) in work.txs.iter().enumerate() {
        if registry.get(&t.tx.sender).is_none() {
            return Err(ScenarioError::WorkloadSigner(i));
        }
    }
    let vkeys: Vec<_> = (0..n).map(|i| validator_key(scenario.seed, i)).collect();
    let validators =
        ValidatorSet::new(vkeys.iter().map(Keypair::public_key).collect()).expect("distinct keys");
    let chain_id = hash_concat(&[b"tp/chain", &scenario.seed.to_be_bytes()]);
    let genesis_state = WorldState::genesis(
        chain_id,
        work.accounts
            .iter()
            .map(|a| (a.public_key.address(), a.balance)),
    );
    let genesis = signed_genesis(&genesis_state, &vkeys);
    let timeout = scenario.timeout();
    let cfg = Arc::new(NodeConfig {
        validators: Arc::new(validators.clone()),
        registry: Arc::new(registry.clone()),
        timeout_ticks: timeout,
        empty_block_interval: scenario.empty_block_interval,
        max_block_txs: scenario.max_block_txs,
        sync_batch: 16,
    });

    let mut sim = Sim {
        nodes: vkeys
            .iter()
            .enumerate()
            .map(|(i, k)| {
                Node::new(
                    i,
                    k.clone(),
                    cfg.clone(),
                    genesis.clone(),
                    genesis_state.clone(),
                )
            })
            .collect(),
        crashed: vec![false; n],
        rng: ChaCha8Rng::seed_from_u64(scenario.seed),
        queue: BTreeMap::new(),
        seq: 0,
        trace: vec![TraceEvent::Start {
            scenario: scenario.digest(),
            seed: scenario.seed,
            n_validators: n,
            timeout_ticks: timeout,
            max_ticks: scenario.max_ticks,
            workload_txs: work.txs.len(),
        }],
        first_commit: BTreeMap::new(),
        conflicts: Vec::new(),
        workload_hashes: work.txs.iter().map(|t| t.tx.hash()).collect(),
        committed_anywhere: BTreeSet::new(),
        committed_per_node: vec![0; n],
    };

    let mut submissions: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, t) in work.txs.iter().enumerate() {
        submissions.entry(t.tick).or_default().push(i);
    }
    let last_submission = work.txs.iter().map(|t| t.tick).max().unwrap_or(0);
    let total = sim.workload_hashes.len();
    let mut crashes: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for c in &scenario.crash_faults {
        crashes.entry(c.tick).or_default().push(c.node);
    }
    let mut pending: BTreeMap<usize, Pending> = BTreeMap::new();
    let resubmit_after = 2 * timeout;

    let mut end_tick = scenario.max_ticks;
    let mut truncated = true;
    for tick in 0..=scenario.max_ticks {
        for &node in crashes.get(&tick).into_iter().flatten() {
            if !sim.crashed[node] {
                sim.crashed[node] = true;
                sim.trace.push(TraceEvent::Crash { tick, node });
            }
        }

        for &i in submissions.get(&tick).into_iter().flatten() {
            let tx = work.txs[i].tx.clone();
            let Some(node) = sim.next_live(i % n) else {
                continue;
            };
            sim.trace.push(TraceEvent::Submit {
                tick,
                node,
                tx: tx.hash(),
                resubmit: false,
            });
            let outs = sim.nodes[node].submit(tx.clone());
            sim.send(scenario, tick, node, outs);
            pending.insert(
                i,
                Pending {
                    tx,
                    last_tick: tick,
                    last_node: node,
                },
            );
        }

        pending.retain(|_, p| !sim.committed_anywhere.contains(&p.tx.hash()));
        let due: Vec<usize> = pending
            .iter()
            .filter(|(_, p)| tick >= p.last_tick + resubmit_after)
            .map(|(i, _)| *i)
            .collect();
        for i in due {
            let p = &pending[&i];
            let Some(node) = sim.next_live(p.last_node + 1) else {
                continue;
            };
            let tx = p.tx.clone();
            sim.trace.push(TraceEvent::Submit {
                tick,
                node,
                tx: tx.hash(),
                resubmit: true,
            });
            let outs = sim.nodes[node].submit(tx);
            sim.send(scenario, tick, node, outs);
            let p = pending.get_mut(&i).expect("present");
            p.last_tick = tick;
            p.last_node = node;
        }

        while let Some(entry) = sim.queue.first_entry() {
            if entry.key().0 != tick {
                break;
            }
            let ((_, to, _), (from, msg)) = entry.remove_entry();
            if sim.crashed[to] {
                sim.trace.push(TraceEvent::Lost {
                    tick,
                    from,
                    to,
                    kind: msg.kind().to_string(),
                });
                continue;
            }
            let outs = sim.nodes[to].on_message(from, msg, tick);
            sim.record_commits(tick, to);
            sim.send(scenario, tick, to, outs);
        }

        for i in 0..n {
            if sim.crashed[i] {
                continue;
            }
            let outs = sim.nodes[i].on_tick(tick);
            sim.record_commits(tick, i);
            sim.send(scenario, tick, i, outs);
        }

        let done = tick >= last_submission
            && (0..n).all(|i| sim.crashed[i] || sim.committed_per_node[i] >= total);
        if done {
            end_tick = tick;
            truncated = false;
            break;
        }
    }

    let nodes: Vec<NodeSummary> = sim
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let head = node.chain().last().expect("genesis");
            NodeSummary {
                node: i,
                crashed: sim.crashed[i],
                height: head.header.height,
                head: head.hash(),
                state_root: node.state().root(),
                state_bytes: node.state().canonical_bytes().len() as u64,
                stats: node.stats().clone(),
            }
        })
        .collect();
    sim.trace.push(TraceEvent::End {
        tick: end_tick,
        truncated,
        conflicts: sim.conflicts.len() as u64,
        nodes,
    });

    Ok(SimOutcome {
        trace: SimTrace { events: sim.trace },
        nodes: sim.nodes,
        crashed: sim.crashed,
        validators,
        registry,
        genesis_state,
        workload: work.txs.into_iter().map(|t| t.tx).collect(),
        conflicts: sim.conflicts,
        truncated,
    })
}
