use serde::{Deserialize, Serialize};

use crate::block::{Block, ValidatorSet};
use crate::codec::Encoder;
use crate::crypto::{Address, Digest, Keypair, Signature};
use crate::tx::Transaction;

/// A block a node voted for, and the round of that vote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Locked {
    pub round: u64,
    pub block: Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConsensusMessage {
    /// A vote-less block offered for `round`.
    Propose {
        block: Block,
        round: u64,
        signer: Address,
        signature: Signature,
    },
    /// Signature is over the raw header hash so it can be copied into the
    /// committed block.
    Vote {
        header_hash: Digest,
        height: u64,
        round: u64,
        signer: Address,
        signature: Signature,
    },
    Commit {
        block: Block,
    },
    TxGossip {
        tx: Transaction,
    },
    /// Sent on entering `round`; reports the signer's latest vote at
    /// `height` so the next proposer can re-offer it.
    RoundChange {
        height: u64,
        round: u64,
        locked: Option<Locked>,
        signer: Address,
        signature: Signature,
    },
}

fn propose_bytes(hash: &Digest, round: u64) -> Vec<u8> {
    let mut e = Encoder::new();
    e.fixed(b"tp/propose").fixed(&hash.0).u64(round);
    e.finish()
}

fn round_change_bytes(height: u64, round: u64, locked: &Option<Locked>) -> Vec<u8> {
    let mut e = Encoder::new();
    e.fixed(b"tp/round-change").u64(height).u64(round);
    match locked {
        None => e.u8(0),
        Some(l) => e.u8(1).u64(l.round).fixed(&l.block.hash().0),
    };
    e.finish()
}

impl ConsensusMessage {
    pub fn propose(block: Block, round: u64, key: &Keypair) -> Self {
        let signature = key.sign(&propose_bytes(&block.hash(), round));
        ConsensusMessage::Propose {
            block,
            round,
            signer: key.address(),
            signature,
        }
    }

    pub fn vote(header_hash: Digest, height: u64, round: u64, key: &Keypair) -> Self {
        ConsensusMessage::Vote {
            header_hash,
            height,
            round,
            signer: key.address(),
            signature: key.sign(&header_hash.0),
        }
    }

    pub fn round_change(height: u64, round: u64, locked: Option<Locked>, key: &Keypair) -> Self {
        let signature = key.sign(&round_change_bytes(height, round, &locked));
        ConsensusMessage::RoundChange {
            height,
            round,
            locked,
            signer: key.address(),
            signature,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ConsensusMessage::Propose { .. } => "propose",
            ConsensusMessage::Vote { .. } => "vote",
            ConsensusMessage::Commit { .. } => "commit",
            ConsensusMessage::TxGossip { .. } => "tx",
            ConsensusMessage::RoundChange { .. } => "round_change",
        }
    }

    /// Height the message is about, if it carries one.
    pub fn height(&self) -> Option<u64> {
        match self {
            ConsensusMessage::Propose { block, .. } | ConsensusMessage::Commit { block } => {
                Some(block.header.height)
            }
            ConsensusMessage::Vote { height, .. }
            | ConsensusMessage::RoundChange { height, .. } => Some(*height),
            ConsensusMessage::TxGossip { .. } => None,
        }
    }

    /// Checks the validator signature carried by Propose, Vote and
    /// RoundChange. Commit and TxGossip carry their own evidence and
    /// always pass here.
    pub fn verify_signer(&self, validators: &ValidatorSet) -> bool {
        let check = |signer: &Address, msg: &[u8], sig: &Signature| {
            validators
                .key_of(signer)
                .is_some_and(|k| k.verify(msg, sig))
        };
        match self {
            ConsensusMessage::Propose {
                block,
                round,
                signer,
                signature,
            } => check(signer, &propose_bytes(&block.hash(), *round), signature),
            ConsensusMessage::Vote {
                header_hash,
                signer,
                signature,
                ..
            } => check(signer, &header_hash.0, signature),
            ConsensusMessage::RoundChange {
                height,
                round,
                locked,
                signer,
                signature,
            } => check(
                signer,
                &round_change_bytes(*height, *round, locked),
                signature,
            ),
            ConsensusMessage::Commit { .. } | ConsensusMessage::TxGossip { .. } => true,
        }
    }
}
