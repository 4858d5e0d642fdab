//! One validator's consensus state machine.
//!
//! Rounds follow single-decree Paxos: a round-`r` proposer that is not in
//! round 0 first collects a quorum of `RoundChange` messages for `r` and
//! re-offers the block with the highest reported vote round, else a fresh
//! one. A node votes at most once per round and never below its current
//! round. A quorum of votes for one `(round, hash)` commits.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::message::{ConsensusMessage, Locked};
use crate::block::{build_block, verify_votes, Block, ValidatorSet, Vote};
use crate::crypto::{Address, Digest, KeyRegistry, Keypair, Signature};
use crate::merkle::merkle_root;
use crate::tx::Transaction;
use crate::vm::WorldState;

/// How far ahead of its own height a node buffers messages.
const MAX_AHEAD: u64 = 64;
const MAX_BUFFERED_PER_HEIGHT: usize = 512;

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub validators: Arc<ValidatorSet>,
    pub registry: Arc<KeyRegistry>,
    pub timeout_ticks: u64,
    pub empty_block_interval: u64,
    pub max_block_txs: usize,
    /// Blocks sent per catch-up response.
    pub sync_batch: usize,
}

impl NodeConfig {
    fn resend_interval(&self) -> u64 {
        (self.timeout_ticks / 4).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    Broadcast(ConsensusMessage),
    To(usize, ConsensusMessage),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub invalid_dropped: u64,
    pub proposals: u64,
    pub votes: u64,
    pub round_changes: u64,
    pub commits: u64,
    pub sync_blocks_sent: u64,
}

/// Pending transactions in arrival order.
#[derive(Debug, Clone, Default)]
struct Mempool {
    by_seq: BTreeMap<u64, Transaction>,
    seq_of: BTreeMap<Digest, u64>,
    next: u64,
}

impl Mempool {
    fn insert(&mut self, hash: Digest, tx: Transaction) -> bool {
        if self.seq_of.contains_key(&hash) {
            return false;
        }
        self.seq_of.insert(hash, self.next);
        self.by_seq.insert(self.next, tx);
        self.next += 1;
        true
    }

    fn remove(&mut self, hash: &Digest) {
        if let Some(seq) = self.seq_of.remove(hash) {
            self.by_seq.remove(&seq);
        }
    }

    fn prune_stale(&mut self, state: &WorldState) {
        let stale: Vec<_> = self
            .by_seq
            .iter()
            .filter(|(_, tx)| tx.nonce < state.nonce(&tx.sender))
            .map(|(seq, tx)| (*seq, tx.hash()))
            .collect();
        for (seq, hash) in stale {
            self.by_seq.remove(&seq);
            self.seq_of.remove(&hash);
        }
    }

    /// Arrival order, skipping transactions whose nonce is not yet due.
    /// Repeats passes so a late-arriving predecessor unblocks successors.
    fn select(&self, state: &WorldState, max: usize) -> Vec<Transaction> {
        let mut expected: BTreeMap<Address, u64> = BTreeMap::new();
        let mut used = BTreeSet::new();
        let mut chosen = Vec::new();
        loop {
            let mut progress = false;
            for (seq, tx) in &self.by_seq {
                if chosen.len() >= max {
                    return chosen;
                }
                if used.contains(seq) || state.account(&tx.sender).is_none() {
                    continue;
                }
                let exp = expected
                    .entry(tx.sender)
                    .or_insert_with(|| state.nonce(&tx.sender));
                if tx.nonce == *exp {
                    *exp += 1;
                    used.insert(*seq);
                    chosen.push(tx.clone());
                    progress = true;
                }
            }
            if !progress {
                return chosen;
            }
        }
    }

    fn len(&self) -> usize {
        self.by_seq.len()
    }
}

/// Everything that resets when the node moves to a new height.
#[derive(Debug, Clone, Default)]
struct HeightState {
    last_vote: Option<Locked>,
    voted_round: Option<u64>,
    proposed_round: Option<u64>,
    proposals: BTreeMap<u64, Block>,
    validated: BTreeMap<Digest, WorldState>,
    invalid: BTreeSet<Digest>,
    votes: BTreeMap<(u64, Digest), BTreeMap<usize, Signature>>,
    round_changes: BTreeMap<u64, BTreeMap<usize, Option<Locked>>>,
    peer_rounds: BTreeMap<usize, u64>,
    last_resend: u64,
    /// Round in which a quorum of RoundChanges has been seen.
    quorum_round: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Node {
    id: usize,
    key: Keypair,
    cfg: Arc<NodeConfig>,
    chain: Vec<Block>,
    state: WorldState,
    round: u64,
    round_started: u64,
    /// Start of the current proposal wait within the round.
    wait_from: u64,
    height_started: u64,
    mempool: Mempool,
    committed_txs: BTreeSet<Digest>,
    verified_txs: BTreeSet<Digest>,
    hs: HeightState,
    future: BTreeMap<u64, Vec<(usize, ConsensusMessage)>>,
    last_sync: BTreeMap<usize, u64>,
    last_ping: BTreeMap<usize, u64>,
    new_commits: Vec<u64>,
    stats: NodeStats,
}

impl Node {
    /// `genesis` must already carry its quorum votes.
    pub fn new(
        id: usize,
        key: Keypair,
        cfg: Arc<NodeConfig>,
        genesis: Block,
        genesis_state: WorldState,
    ) -> Node {
        Node {
            id,
            key,
            cfg,
            chain: vec![genesis],
            state: genesis_state,
            round: 0,
            round_started: 0,
            wait_from: 0,
            height_started: 0,
            mempool: Mempool::default(),
            committed_txs: BTreeSet::new(),
            verified_txs: BTreeSet::new(),
            hs: HeightState::default(),
            future: BTreeMap::new(),
            last_sync: BTreeMap::new(),
            last_ping: BTreeMap::new(),
            new_commits: Vec::new(),
            stats: NodeStats::default(),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn address(&self) -> Address {
        self.key.address()
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// The height currently being decided.
    pub fn height(&self) -> u64 {
        self.chain.len() as u64
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn has_committed(&self, tx_hash: &Digest) -> bool {
        self.committed_txs.contains(tx_hash)
    }

    /// Heights committed since the last call.
    pub fn take_new_commits(&mut self) -> Vec<u64> {
        std::mem::take(&mut self.new_commits)
    }

    fn quorum(&self) -> usize {
        self.cfg.validators.quorum()
    }

    fn is_proposer(&self, round: u64) -> bool {
        self.cfg
            .validators
            .proposer_for(self.height(), round)
            .address
            == self.key.address()
    }

    fn tx_valid(&mut self, tx: &Transaction) -> bool {
        let hash = tx.hash();
        if self.verified_txs.contains(&hash) {
            return true;
        }
        if tx.verify(&self.cfg.registry) == Ok(true) {
            self.verified_txs.insert(hash);
            true
        } else {
            false
        }
    }

    /// A client hands a transaction to this node.
    pub fn submit(&mut self, tx: Transaction) -> Vec<Outbound> {
        let mut out = Vec::new();
        if self.accept_tx(&tx) {
            out.push(Outbound::Broadcast(ConsensusMessage::TxGossip { tx }));
        }
        out
    }

    fn accept_tx(&mut self, tx: &Transaction) -> bool {
        let hash = tx.hash();
        if self.committed_txs.contains(&hash) || tx.nonce < self.state.nonce(&tx.sender) {
            return false;
        }
        if !self.tx_valid(tx) {
            self.stats.invalid_dropped += 1;
            return false;
        }
        self.mempool.insert(hash, tx.clone())
    }

    pub fn on_tick(&mut self, tick: u64) -> Vec<Outbound> {
        let mut out = Vec::new();
        if self.is_proposer(self.round) && self.hs.proposed_round != Some(self.round) {
            self.maybe_propose(tick, &mut out);
        }
        if tick >= self.deadline() {
            self.advance_round(self.round + 1, tick, &mut out);
            let txs: Vec<_> = self
                .mempool
                .by_seq
                .values()
                .take(self.cfg.max_block_txs)
                .cloned()
                .collect();
            out.extend(
                txs.into_iter()
                    .map(|tx| Outbound::Broadcast(ConsensusMessage::TxGossip { tx })),
            );
        } else if tick >= self.hs.last_resend + self.cfg.resend_interval() {
            self.resend(tick, &mut out);
        }
        out
    }

    /// Round 0 waits out the empty-block interval too. Later rounds wait
    /// from the moment the round became active: a quorum of RoundChanges
    /// seen, or the proposal received. Without a quorum the node gives up
    /// after three timeouts.
    fn deadline(&self) -> u64 {
        let t = self.cfg.timeout_ticks;
        if self.round == 0 {
            self.round_started + self.cfg.empty_block_interval + t
        } else if self.hs.quorum_round == Some(self.round) {
            self.wait_from + t
        } else {
            self.round_started + 3 * t
        }
    }

    fn note_round_changes(&mut self, tick: u64) {
        let active = self
            .hs
            .round_changes
            .get(&self.round)
            .is_some_and(|m| m.len() >= self.quorum());
        if active && self.hs.quorum_round != Some(self.round) {
            self.hs.quorum_round = Some(self.round);
            self.wait_from = tick;
        }
    }

    /// Re-sends this round's own messages; receivers treat them as duplicates.
    fn resend(&mut self, tick: u64, out: &mut Vec<Outbound>) {
        self.hs.last_resend = tick;
        let h = self.height();
        let r = self.round;
        if self.hs.proposed_round == Some(r) {
            if let Some(block) = self.hs.proposals.get(&r) {
                out.push(Outbound::Broadcast(ConsensusMessage::propose(
                    block.clone(),
                    r,
                    &self.key,
                )));
            }
        }
        if let Some(l) = &self.hs.last_vote {
            if l.round == r {
                out.push(Outbound::Broadcast(ConsensusMessage::vote(
                    l.block.hash(),
                    h,
                    r,
                    &self.key,
                )));
            }
        }
        if r > 0 {
            out.push(Outbound::Broadcast(ConsensusMessage::round_change(
                h,
                r,
                self.hs.last_vote.clone(),
                &self.key,
            )));
        }
    }

    fn maybe_propose(&mut self, tick: u64, out: &mut Vec<Outbound>) {
        if self.round == 0 {
            let has_work = !self.mempool.select(&self.state, 1).is_empty();
            if has_work || tick >= self.height_started + self.cfg.empty_block_interval {
                self.propose_fresh(tick, out);
            }
            return;
        }
        let Some(rcs) = self.hs.round_changes.get(&self.round) else {
            return;
        };
        if rcs.len() < self.quorum() {
            return;
        }
        let locked = rcs
            .values()
            .flatten()
            .max_by_key(|l| l.round)
            .map(|l| l.block.clone());
        match locked {
            Some(block) => {
                if self.validate(&block) {
                    self.send_proposal(block, tick, out);
                }
            }
            None => self.propose_fresh(tick, out),
        }
    }

    fn propose_fresh(&mut self, tick: u64, out: &mut Vec<Outbound>) {
        let txs = self.mempool.select(&self.state, self.cfg.max_block_txs);
        let parent = &self.chain.last().expect("genesis").header;
        let ts = tick.max(parent.timestamp);
        let h = self.height();
        let mut post = self.state.clone();
        post.apply_all(&txs, h, ts);
        let block = build_block(parent, txs, post.root(), self.key.address(), ts);
        self.hs.validated.insert(block.hash(), post);
        self.send_proposal(block, tick, out);
    }

    fn send_proposal(&mut self, block: Block, tick: u64, out: &mut Vec<Outbound>) {
        let r = self.round;
        self.stats.proposals += 1;
        self.hs.proposed_round = Some(r);
        self.hs.proposals.insert(r, block.clone());
        out.push(Outbound::Broadcast(ConsensusMessage::propose(
            block.clone(),
            r,
            &self.key,
        )));
        self.try_vote(r, block, tick, out);
    }

    fn advance_round(&mut self, round: u64, tick: u64, out: &mut Vec<Outbound>) {
        self.round = round;
        self.round_started = tick;
        self.wait_from = tick;
        self.hs.last_resend = tick;
        self.stats.round_changes += 1;
        let locked = self.hs.last_vote.clone();
        self.hs
            .round_changes
            .entry(round)
            .or_default()
            .insert(self.id, locked.clone());
        out.push(Outbound::Broadcast(ConsensusMessage::round_change(
            self.height(),
            round,
            locked,
            &self.key,
        )));
        self.note_round_changes(tick);
    }

    fn try_vote(&mut self, round: u64, block: Block, tick: u64, out: &mut Vec<Outbound>) {
        if round < self.round || self.hs.voted_round.is_some_and(|v| round <= v) {
            return;
        }
        let hash = block.hash();
        self.stats.votes += 1;
        self.hs.voted_round = Some(round);
        self.hs.last_vote = Some(Locked { round, block });
        let msg = ConsensusMessage::vote(hash, self.height(), round, &self.key);
        let ConsensusMessage::Vote { signature, .. } = &msg else {
            unreachable!()
        };
        let signature = *signature;
        out.push(Outbound::Broadcast(msg));
        self.record_vote(round, hash, self.id, signature, tick, out);
    }

    fn record_vote(
        &mut self,
        round: u64,
        hash: Digest,
        signer: usize,
        signature: Signature,
        tick: u64,
        out: &mut Vec<Outbound>,
    ) {
        self.hs
            .votes
            .entry((round, hash))
            .or_default()
            .insert(signer, signature);
        self.check_quorum(round, hash, tick, out);
    }

    fn check_quorum(&mut self, round: u64, hash: Digest, tick: u64, out: &mut Vec<Outbound>) {
        let Some(tally) = self.hs.votes.get(&(round, hash)) else {
            return;
        };
        if tally.len() < self.quorum() {
            return;
        }
        let Some(proposal) = self.hs.proposals.get(&round).filter(|b| b.hash() == hash) else {
            return;
        };
        let mut block = proposal.clone();
        block.votes = tally
            .iter()
            .map(|(idx, sig)| Vote {
                signer: self.cfg.validators.members()[*idx].address,
                signature: *sig,
            })
            .collect();
        let post = self.hs.validated[&hash].clone();
        out.push(Outbound::Broadcast(ConsensusMessage::Commit {
            block: block.clone(),
        }));
        self.append(block, post, tick, out);
    }

    /// Checks a vote-less block against the local head by re-executing it.
    fn validate(&mut self, block: &Block) -> bool {
        let hash = block.hash();
        if self.hs.validated.contains_key(&hash) {
            return true;
        }
        if self.hs.invalid.contains(&hash) {
            return false;
        }
        let parent = &self.chain.last().expect("genesis").header;
        let h = &block.header;
        let shape_ok = h.height == parent.height + 1
            && h.prev_hash == parent.hash()
            && h.timestamp >= parent.timestamp
            && self.cfg.validators.key_of(&h.proposer).is_some()
            && block.transactions.len() <= self.cfg.max_block_txs
            && merkle_root(&block.tx_hashes()) == h.merkle_root;
        let ok = shape_ok && block.transactions.iter().all(|tx| self.tx_valid(tx)) && {
            let mut post = self.state.clone();
            post.apply_all(&block.transactions, h.height, h.timestamp);
            let good = post.root() == h.state_root;
            if good {
                self.hs.validated.insert(hash, post);
            }
            good
        };
        if !ok {
            self.hs.invalid.insert(hash);
            self.stats.invalid_dropped += 1;
        }
        ok
    }

    fn append(&mut self, block: Block, post: WorldState, tick: u64, out: &mut Vec<Outbound>) {
        for tx in &block.transactions {
            let hash = tx.hash();
            self.mempool.remove(&hash);
            self.committed_txs.insert(hash);
        }
        self.state = post;
        self.mempool.prune_stale(&self.state);
        self.new_commits.push(block.header.height);
        self.chain.push(block);
        self.stats.commits += 1;
        self.hs = HeightState {
            last_resend: tick,
            ..Default::default()
        };
        self.round = 0;
        self.round_started = tick;
        self.wait_from = tick;
        self.height_started = tick;

        let h = self.height();
        self.future = self.future.split_off(&h);
        if let Some(buffered) = self.future.remove(&h) {
            for (from, msg) in buffered {
                self.dispatch(from, msg, tick, out);
            }
        }
    }

    pub fn on_message(&mut self, from: usize, msg: ConsensusMessage, tick: u64) -> Vec<Outbound> {
        let mut out = Vec::new();
        if let ConsensusMessage::TxGossip { tx } = &msg {
            self.accept_tx(tx);
            return out;
        }
        let height = msg.height().expect("non-gossip messages carry a height");
        if height < self.height() {
            self.maybe_sync(from, height, tick, &mut out);
            return out;
        }
        if !msg.verify_signer(&self.cfg.validators) {
            self.stats.invalid_dropped += 1;
            return out;
        }
        self.dispatch(from, msg, tick, &mut out);
        out
    }

    /// Processes a signature-checked message at or above the local height.
    fn dispatch(&mut self, from: usize, msg: ConsensusMessage, tick: u64, out: &mut Vec<Outbound>) {
        let h = self.height();
        let height = msg.height().expect("dispatch sees heighted messages");
        if height > h {
            self.buffer(from, height, msg, tick, out);
            return;
        }
        match msg {
            ConsensusMessage::Propose {
                block,
                round,
                signer,
                ..
            } => self.on_propose(block, round, signer, tick, out),
            ConsensusMessage::Vote {
                header_hash,
                round,
                signer,
                signature,
                ..
            } => {
                let idx = self
                    .cfg
                    .validators
                    .index_of(&signer)
                    .expect("signer checked");
                self.record_vote(round, header_hash, idx, signature, tick, out);
            }
            ConsensusMessage::Commit { block } => self.on_commit(block, tick, out),
            ConsensusMessage::RoundChange {
                round,
                locked,
                signer,
                ..
            } => self.on_round_change(round, locked, signer, tick, out),
            ConsensusMessage::TxGossip { .. } => unreachable!(),
        }
    }

    fn buffer(
        &mut self,
        from: usize,
        height: u64,
        msg: ConsensusMessage,
        tick: u64,
        out: &mut Vec<Outbound>,
    ) {
        if height > self.height() + MAX_AHEAD {
            return;
        }
        let slot = self.future.entry(height).or_default();
        if slot.len() < MAX_BUFFERED_PER_HEIGHT && !slot.iter().any(|(_, m)| *m == msg) {
            slot.push((from, msg));
        }
        // Tell the peer where we are so it can send the missing blocks.
        let due = self
            .last_ping
            .get(&from)
            .is_none_or(|t| tick >= t + self.cfg.resend_interval());
        if due {
            self.last_ping.insert(from, tick);
            out.push(Outbound::To(
                from,
                ConsensusMessage::round_change(
                    self.height(),
                    self.round,
                    self.hs.last_vote.clone(),
                    &self.key,
                ),
            ));
        }
    }

    fn maybe_sync(&mut self, peer: usize, peer_height: u64, tick: u64, out: &mut Vec<Outbound>) {
        let due = self
            .last_sync
            .get(&peer)
            .is_none_or(|t| tick >= t + self.cfg.resend_interval());
        if !due {
            return;
        }
        self.last_sync.insert(peer, tick);
        let from = peer_height as usize;
        let to = (from + self.cfg.sync_batch).min(self.chain.len());
        for block in &self.chain[from..to] {
            self.stats.sync_blocks_sent += 1;
            out.push(Outbound::To(
                peer,
                ConsensusMessage::Commit {
                    block: block.clone(),
                },
            ));
        }
    }

    fn on_propose(
        &mut self,
        block: Block,
        round: u64,
        signer: Address,
        tick: u64,
        out: &mut Vec<Outbound>,
    ) {
        let h = self.height();
        if self.cfg.validators.proposer_for(h, round).address != signer || !block.votes.is_empty() {
            self.stats.invalid_dropped += 1;
            return;
        }
        if self.hs.proposals.contains_key(&round) || !self.validate(&block) {
            return;
        }
        let hash = block.hash();
        self.hs.proposals.insert(round, block.clone());
        if round > self.round {
            self.round = round;
            self.round_started = tick;
        }
        if round == self.round {
            self.wait_from = tick;
            self.hs.quorum_round = Some(round);
        }
        self.try_vote(round, block, tick, out);
        if self.height() == h {
            self.check_quorum(round, hash, tick, out);
        }
    }

    fn on_commit(&mut self, block: Block, tick: u64, out: &mut Vec<Outbound>) {
        if verify_votes(&block, &self.cfg.validators).is_err() {
            self.stats.invalid_dropped += 1;
            return;
        }
        if !self.validate(&block.without_votes()) {
            return;
        }
        let post = self.hs.validated[&block.hash()].clone();
        self.append(block, post, tick, out);
    }

    fn on_round_change(
        &mut self,
        round: u64,
        locked: Option<Locked>,
        signer: Address,
        tick: u64,
        out: &mut Vec<Outbound>,
    ) {
        let idx = self
            .cfg
            .validators
            .index_of(&signer)
            .expect("signer checked");
        self.hs
            .round_changes
            .entry(round)
            .or_default()
            .insert(idx, locked);
        let seen = self.hs.peer_rounds.entry(idx).or_insert(round);
        *seen = (*seen).max(round);

        // Skip ahead once f+1 peers are known to be in a higher round.
        let f = self.cfg.validators.len() - self.quorum();
        let mut rounds: Vec<u64> = self
            .hs
            .peer_rounds
            .iter()
            .filter(|(i, _)| **i != self.id)
            .map(|(_, r)| *r)
            .collect();
        rounds.sort_unstable_by(|a, b| b.cmp(a));
        if let Some(&r) = rounds.get(f) {
            if r > self.round {
                self.advance_round(r, tick, out);
            }
        }
        self.note_round_changes(tick);
    }
}
