//! Block headers, blocks, quorum votes and chain verification.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::{hash256, Address, Digest, KeyRegistry, Keypair, PublicKey, Signature};
use crate::merkle::{merkle_proof, merkle_root, IndexOutOfRange, MerkleProof};
use crate::tx::Transaction;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub state_root: Digest,
    /// Logical tick, never wall-clock time.
    pub timestamp: u64,
    pub proposer: Address,
}

impl BlockHeader {
    pub fn encode(&self, e: &mut Encoder) {
        e.u64(self.height)
            .fixed(&self.prev_hash.0)
            .fixed(&self.merkle_root.0)
            .fixed(&self.state_root.0)
            .u64(self.timestamp)
            .fixed(&self.proposer.0);
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(132);
        self.encode(&mut e);
        e.finish()
    }

    pub fn hash(&self) -> Digest {
        hash256(&self.canonical_bytes())
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<BlockHeader, DecodeError> {
        Ok(BlockHeader {
            height: d.u64()?,
            prev_hash: Digest(d.fixed()?),
            merkle_root: Digest(d.fixed()?),
            state_root: Digest(d.fixed()?),
            timestamp: d.u64()?,
            proposer: Address(d.fixed()?),
        })
    }
}

/// A validator's signature over a header hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub signer: Address,
    pub signature: Signature,
}

impl Vote {
    pub fn sign(header_hash: &Digest, key: &Keypair) -> Vote {
        Vote {
            signer: key.address(),
            signature: key.sign(&header_hash.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    pub votes: Vec<Vote>,
}

const MIN_TX_LEN: usize = 20 + 8 + 5 + 8 + 64;
const VOTE_LEN: usize = 20 + 64;

impl Block {
    pub fn hash(&self) -> Digest {
        self.header.hash()
    }

    pub fn tx_hashes(&self) -> Vec<Digest> {
        self.transactions.iter().map(Transaction::hash).collect()
    }

    pub fn encode(&self, e: &mut Encoder) {
        self.header.encode(e);
        e.u32(self.transactions.len() as u32);
        for tx in &self.transactions {
            e.bytes(&tx.canonical_bytes());
        }
        e.u32(self.votes.len() as u32);
        for v in &self.votes {
            e.fixed(&v.signer.0).fixed(&v.signature.0);
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(256);
        self.encode(&mut e);
        e.finish()
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Block, DecodeError> {
        let header = BlockHeader::decode(d)?;
        let n_tx = d.count(4 + MIN_TX_LEN)?;
        let mut transactions = Vec::with_capacity(n_tx);
        for _ in 0..n_tx {
            transactions.push(Transaction::from_bytes(d.bytes()?)?);
        }
        let n_votes = d.count(VOTE_LEN)?;
        let mut votes = Vec::with_capacity(n_votes);
        for _ in 0..n_votes {
            votes.push(Vote {
                signer: Address(d.fixed()?),
                signature: Signature(d.fixed()?),
            });
        }
        Ok(Block {
            header,
            transactions,
            votes,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Block, DecodeError> {
        let mut d = Decoder::new(bytes);
        let b = Block::decode(&mut d)?;
        d.finish()?;
        Ok(b)
    }

    pub fn merkle_proof(&self, tx_index: u64) -> Result<MerkleProof, IndexOutOfRange> {
        merkle_proof(&self.tx_hashes(), tx_index)
    }

    /// The block without votes, as carried by a proposal.
    pub fn without_votes(&self) -> Block {
        Block {
            header: self.header.clone(),
            transactions: self.transactions.clone(),
            votes: Vec::new(),
        }
    }
}

/// Builds the successor of `parent`; votes are left for consensus to fill.
pub fn build_block(
    parent: &BlockHeader,
    txs: Vec<Transaction>,
    post_state_root: Digest,
    proposer: Address,
    tick: u64,
) -> Block {
    let merkle = merkle_root(&txs.iter().map(Transaction::hash).collect::<Vec<_>>());
    Block {
        header: BlockHeader {
            height: parent.height + 1,
            prev_hash: parent.hash(),
            merkle_root: merkle,
            state_root: post_state_root,
            timestamp: tick,
            proposer,
        },
        transactions: txs,
        votes: Vec::new(),
    }
}

/// Height-0 block committing to the initial world state.
pub fn genesis_block(state_root: Digest, proposer: Address) -> Block {
    Block {
        header: BlockHeader {
            height: 0,
            prev_hash: Digest::ZERO,
            merkle_root: Digest::ZERO,
            state_root,
            timestamp: 0,
            proposer,
        },
        transactions: Vec::new(),
        votes: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validator {
    pub address: Address,
    pub public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidatorSetError {
    #[error("validator set is empty")]
    Empty,
    #[error("duplicate validator {0}")]
    Duplicate(Address),
}

/// Fixed, ordered authority set with a `floor(2n/3) + 1` quorum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorSet {
    members: Vec<Validator>,
}

impl ValidatorSet {
    pub fn new(keys: Vec<PublicKey>) -> Result<ValidatorSet, ValidatorSetError> {
        if keys.is_empty() {
            return Err(ValidatorSetError::Empty);
        }
        let mut seen = BTreeSet::new();
        let mut members = Vec::with_capacity(keys.len());
        for public_key in keys {
            let address = public_key.address();
            if !seen.insert(address) {
                return Err(ValidatorSetError::Duplicate(address));
            }
            members.push(Validator {
                address,
                public_key,
            });
        }
        Ok(ValidatorSet { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn quorum(&self) -> usize {
        2 * self.len() / 3 + 1
    }

    pub fn members(&self) -> &[Validator] {
        &self.members
    }

    pub fn get(&self, index: usize) -> Option<&Validator> {
        self.members.get(index)
    }

    pub fn index_of(&self, addr: &Address) -> Option<usize> {
        self.members.iter().position(|v| v.address == *addr)
    }

    pub fn key_of(&self, addr: &Address) -> Option<&PublicKey> {
        self.members
            .iter()
            .find(|v| v.address == *addr)
            .map(|v| &v.public_key)
    }

    /// Round-robin authority: `validators[(height + round) mod n]`.
    pub fn proposer_for(&self, height: u64, round: u64) -> &Validator {
        let n = self.len() as u64;
        let idx = (height % n + round % n) % n;
        &self.members[idx as usize]
    }
}

/// The check a block failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainFault {
    Malformed,
    HeightMismatch,
    GenesisLink,
    PrevHashMismatch,
    TimestampRegression,
    MerkleMismatch,
    UnknownSender { index: usize },
    TxSignature { index: usize },
    InvalidVote { index: usize },
    DuplicateVote { index: usize },
    Quorum { votes: usize, required: usize },
}

impl fmt::Display for ChainFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainFault::Malformed => f.write_str("malformed"),
            ChainFault::HeightMismatch => f.write_str("height-mismatch"),
            ChainFault::GenesisLink => f.write_str("genesis-link"),
            ChainFault::PrevHashMismatch => f.write_str("prev-hash-mismatch"),
            ChainFault::TimestampRegression => f.write_str("timestamp-regression"),
            ChainFault::MerkleMismatch => f.write_str("merkle-mismatch"),
            ChainFault::UnknownSender { index } => write!(f, "unknown-sender(tx {index})"),
            ChainFault::TxSignature { index } => write!(f, "tx-signature(tx {index})"),
            ChainFault::InvalidVote { index } => write!(f, "invalid-vote({index})"),
            ChainFault::DuplicateVote { index } => write!(f, "duplicate-vote({index})"),
            ChainFault::Quorum { votes, required } => {
                write!(f, "quorum({votes} of {required})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("first invalid block at height {height}: {reason}")]
pub struct FirstInvalidHeight {
    pub height: u64,
    pub reason: ChainFault,
}

/// Every vote must be a valid signature from a distinct validator, and
/// there must be at least a quorum of them.
pub fn verify_votes(block: &Block, validators: &ValidatorSet) -> Result<(), ChainFault> {
    let header_hash = block.header.hash();
    let mut seen = BTreeSet::new();
    for (index, vote) in block.votes.iter().enumerate() {
        let key = validators
            .key_of(&vote.signer)
            .ok_or(ChainFault::InvalidVote { index })?;
        if !seen.insert(vote.signer) {
            return Err(ChainFault::DuplicateVote { index });
        }
        if !key.verify(&header_hash.0, &vote.signature) {
            return Err(ChainFault::InvalidVote { index });
        }
    }
    if seen.len() < validators.quorum() {
        return Err(ChainFault::Quorum {
            votes: seen.len(),
            required: validators.quorum(),
        });
    }
    Ok(())
}

/// Structural checks of one block against its parent, excluding votes.
pub fn verify_block_body(
    parent: Option<&BlockHeader>,
    block: &Block,
    registry: &KeyRegistry,
) -> Result<(), ChainFault> {
    let h = &block.header;
    match parent {
        None => {
            if h.height != 0 {
                return Err(ChainFault::HeightMismatch);
            }
            if h.prev_hash != Digest::ZERO {
                return Err(ChainFault::GenesisLink);
            }
        }
        Some(p) => {
            if h.height != p.height + 1 {
                return Err(ChainFault::HeightMismatch);
            }
            if h.prev_hash != p.hash() {
                return Err(ChainFault::PrevHashMismatch);
            }
            if h.timestamp < p.timestamp {
                return Err(ChainFault::TimestampRegression);
            }
        }
    }
    if merkle_root(&block.tx_hashes()) != h.merkle_root {
        return Err(ChainFault::MerkleMismatch);
    }
    for (index, tx) in block.transactions.iter().enumerate() {
        match tx.verify(registry) {
            Ok(true) => {}
            Ok(false) => return Err(ChainFault::TxSignature { index }),
            Err(_) => return Err(ChainFault::UnknownSender { index }),
        }
    }
    Ok(())
}

pub fn verify_block(
    parent: Option<&BlockHeader>,
    block: &Block,
    validators: &ValidatorSet,
    registry: &KeyRegistry,
) -> Result<(), ChainFault> {
    verify_block_body(parent, block, registry)?;
    verify_votes(block, validators)
}

/// Checks links, Merkle roots, transaction signatures and quorum votes,
/// reporting the lowest failing height.
pub fn verify_chain(
    blocks: &[Block],
    validators: &ValidatorSet,
    registry: &KeyRegistry,
) -> Result<(), FirstInvalidHeight> {
    let mut parent: Option<&BlockHeader> = None;
    for (i, block) in blocks.iter().enumerate() {
        verify_block(parent, block, validators, registry).map_err(|reason| FirstInvalidHeight {
            height: i as u64,
            reason,
        })?;
        parent = Some(&block.header);
    }
    Ok(())
}

/// Decodes each record then verifies; a record that fails to decode is
/// reported as `Malformed` at its position.
pub fn verify_encoded_chain(
    records: &[Vec<u8>],
    validators: &ValidatorSet,
    registry: &KeyRegistry,
) -> Result<Vec<Block>, FirstInvalidHeight> {
    let mut blocks: Vec<Block> = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let fail = |reason| FirstInvalidHeight {
            height: i as u64,
            reason,
        };
        let block = Block::from_bytes(rec).map_err(|_| fail(ChainFault::Malformed))?;
        verify_block(
            blocks.last().map(|b| &b.header),
            &block,
            validators,
            registry,
        )
        .map_err(fail)?;
        blocks.push(block);
    }
    Ok(blocks)
}

/// Verifies a whole chain stream. A torn trailing record is reported as
/// `Malformed` at its index once the complete records before it verify.
pub fn verify_chain_stream(
    bytes: &[u8],
    validators: &ValidatorSet,
    registry: &KeyRegistry,
) -> Result<Vec<Block>, FirstInvalidHeight> {
    let mut d = Decoder::new(bytes);
    let mut records = Vec::new();
    let mut torn = false;
    while d.remaining() > 0 {
        match d.bytes() {
            Ok(r) => records.push(r.to_vec()),
            Err(_) => {
                torn = true;
                break;
            }
        }
    }
    let blocks = verify_encoded_chain(&records, validators, registry)?;
    if torn {
        return Err(FirstInvalidHeight {
            height: records.len() as u64,
            reason: ChainFault::Malformed,
        });
    }
    Ok(blocks)
}

/// Concatenates blocks as `u32 length ‖ canonical block` records.
pub fn encode_chain_stream(blocks: &[Block]) -> Vec<u8> {
    let mut e = Encoder::new();
    for b in blocks {
        e.bytes(&b.canonical_bytes());
    }
    e.finish()
}

/// Splits a chain stream into its block records without decoding them.
pub fn split_chain_stream(bytes: &[u8]) -> Result<Vec<Vec<u8>>, DecodeError> {
    let mut d = Decoder::new(bytes);
    let mut out = Vec::new();
    while d.remaining() > 0 {
        out.push(d.bytes()?.to_vec());
    }
    Ok(out)
}
