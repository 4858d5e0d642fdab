//! TestingPlus: a permissioned ledger for distributed software testing.
//!
//! Layers, bottom up: canonical encoding and crypto ([`codec`], [`crypto`],
//! [`merkle`]), signed transactions and blocks ([`tx`], [`block`]), the
//! contract VM ([`vm`]) with the test-lifecycle records ([`workflow`]),
//! proof-of-authority consensus over a simulated network ([`consensus`]),
//! metrics over simulation traces ([`metrics`]) and a local single-validator
//! chain store for the CLI ([`chain`]).

pub mod block;
pub mod chain;
pub mod codec;
pub mod consensus;
pub mod crypto;
pub mod merkle;
pub mod metrics;
pub mod tx;
pub mod vm;
pub mod workflow;

pub use block::{
    build_block, genesis_block, verify_chain, verify_chain_stream, verify_encoded_chain, Block,
    BlockHeader, ChainFault, FirstInvalidHeight, ValidatorSet, Vote,
};
pub use chain::{GenesisConfig, LocalChain, PayloadRequest};
pub use crypto::{hash256, Address, Digest, KeyFile, KeyRegistry, Keypair, PublicKey, Signature};
pub use merkle::{merkle_proof, merkle_root, verify_merkle_proof, MerkleProof, Side};
pub use metrics::{analyze, run_sweep, MetricsReport, SweepSpec};
pub use tx::{sign_transaction, verify_transaction, Payload, Transaction, UnsignedTransaction};
pub use vm::{apply_transaction, state_root, ApplyContext, Receipt, ReceiptStatus, WorldState};
pub use workflow::{
    audit_trail, compute_compensation, CompensationQuery, CompensationStatement, Verdict,
};
