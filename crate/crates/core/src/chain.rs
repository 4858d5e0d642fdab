//! Single-validator chain kept in a directory, used by the CLI's direct mode.
//!
//! Layout: `genesis.json`, `validator.json` (the validator's key file),
//! `chain.bin` (length-prefixed canonical blocks) and `artifacts/`.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{
    build_block, encode_chain_stream, verify_chain_stream, Block, FirstInvalidHeight, ValidatorSet,
    ValidatorSetError, Vote,
};
use crate::codec::Encoder;
use crate::consensus::{signed_genesis, GenesisAccount};
use crate::crypto::{Digest, KeyFile, KeyFileError, KeyRegistry, Keypair, PublicKey};
use crate::merkle::{verify_merkle_proof, MerkleProof};
use crate::tx::{CaseId, Payload, Transaction, UnsignedTransaction};
use crate::vm::{ApplyContext, Receipt, WorldState};
use crate::workflow::{
    audit_trail, compute_compensation, ArtifactStore, AuditEntry, CompensationQuery,
    CompensationStatement, ExecutionRecord, Feedback, Subject, TestCase, WorkflowError,
};

pub const GENESIS_FILE: &str = "genesis.json";
pub const VALIDATOR_FILE: &str = "validator.json";
pub const CHAIN_FILE: &str = "chain.bin";
pub const ARTIFACTS_DIR: &str = "artifacts";

fn default_empty_block_interval() -> u64 {
    50
}

fn default_timeout_ticks() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisConfig {
    pub chain_id: Digest,
    pub validators: Vec<PublicKey>,
    pub accounts: Vec<GenesisAccount>,
    #[serde(default = "default_empty_block_interval")]
    pub empty_block_interval: u64,
    #[serde(default = "default_timeout_ticks")]
    pub timeout_ticks: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenesisError {
    #[error(transparent)]
    Validators(#[from] ValidatorSetError),
    #[error("total issuance exceeds u64")]
    IssuanceOverflow,
}

impl GenesisConfig {
    pub fn validate(&self) -> Result<(), GenesisError> {
        ValidatorSet::new(self.validators.clone())?;
        self.accounts
            .iter()
            .try_fold(0u64, |acc, a| acc.checked_add(a.balance))
            .ok_or(GenesisError::IssuanceOverflow)?;
        Ok(())
    }

    pub fn validator_set(&self) -> Result<ValidatorSet, GenesisError> {
        Ok(ValidatorSet::new(self.validators.clone())?)
    }

    pub fn registry(&self) -> KeyRegistry {
        self.accounts.iter().map(|a| a.public_key).collect()
    }

    pub fn initial_state(&self) -> WorldState {
        WorldState::genesis(
            self.chain_id,
            self.accounts
                .iter()
                .map(|a| (a.public_key.address(), a.balance)),
        )
    }
}

/// What a client asks to submit. The nonce defaults to the sender's
/// current on-chain nonce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadRequest {
    pub payload: Payload,
    #[serde(default)]
    pub value: u64,
    #[serde(default)]
    pub nonce: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("no chain at {0}")]
    NoChain(PathBuf),
    #[error("a chain already exists at {0}")]
    AlreadyInitialized(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid genesis: {0}")]
    Genesis(#[from] GenesisError),
    #[error("invalid key file: {0}")]
    Key(#[from] KeyFileError),
    #[error("direct mode needs exactly one validator, genesis lists {0}")]
    NotSingleValidator(usize),
    #[error("validator key does not match the genesis validator")]
    ValidatorMismatch,
    #[error("chain store corrupt: {0}")]
    Corrupt(FirstInvalidHeight),
    #[error("chain store corrupt: replayed state root differs at height {0}")]
    StateRootMismatch(u64),
    #[error("chain store corrupt: genesis block does not match genesis.json")]
    GenesisMismatch,
    #[error("sender {0} is not a genesis account")]
    UnknownSender(crate::crypto::Address),
    #[error("transaction signature does not verify")]
    BadSignature,
    #[error("no block at height {0}")]
    UnknownBlock(u64),
    #[error("no transaction {index} in block {height}")]
    UnknownTx { height: u64, index: u64 },
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

impl ChainError {
    /// True when the stored chain failed verification.
    pub fn is_corruption(&self) -> bool {
        matches!(
            self,
            ChainError::Corrupt(_) | ChainError::StateRootMismatch(_) | ChainError::GenesisMismatch
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ChainError + '_ {
    move |source| ChainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ChainError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ChainError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ChainError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseView {
    pub case: TestCase,
    pub executions: Vec<ExecutionRecord>,
    pub feedback: Vec<Feedback>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofView {
    pub height: u64,
    pub tx_index: u64,
    pub tx_hash: Digest,
    pub merkle_root: Digest,
    pub proof: MerkleProof,
    pub valid: bool,
}

pub struct LocalChain {
    dir: PathBuf,
    genesis: GenesisConfig,
    key: Keypair,
    validators: ValidatorSet,
    registry: KeyRegistry,
    blocks: Vec<Block>,
    state: WorldState,
}

impl LocalChain {
    /// Writes a new store with a signed genesis block.
    pub fn init(
        dir: &Path,
        genesis: GenesisConfig,
        key: &Keypair,
    ) -> Result<LocalChain, ChainError> {
        genesis.validate()?;
        if genesis.validators.len() != 1 {
            return Err(ChainError::NotSingleValidator(genesis.validators.len()));
        }
        if genesis.validators[0] != key.public_key() {
            return Err(ChainError::ValidatorMismatch);
        }
        if dir.join(CHAIN_FILE).exists() {
            return Err(ChainError::AlreadyInitialized(dir.to_path_buf()));
        }
        fs::create_dir_all(dir.join(ARTIFACTS_DIR)).map_err(io_err(dir))?;
        let state = genesis.initial_state();
        let block0 = signed_genesis(&state, std::slice::from_ref(key));
        write_json(&dir.join(GENESIS_FILE), &genesis)?;
        write_json(&dir.join(VALIDATOR_FILE), &KeyFile::from_keypair(key))?;
        let chain_path = dir.join(CHAIN_FILE);
        fs::write(
            &chain_path,
            encode_chain_stream(std::slice::from_ref(&block0)),
        )
        .map_err(io_err(&chain_path))?;
        Ok(LocalChain {
            dir: dir.to_path_buf(),
            validators: genesis.validator_set()?,
            registry: genesis.registry(),
            genesis,
            key: key.clone(),
            blocks: vec![block0],
            state,
        })
    }

    /// Loads the store, verifying every block and replaying all
    /// transactions against the recorded state roots.
    pub fn open(dir: &Path) -> Result<LocalChain, ChainError> {
        let chain_path = dir.join(CHAIN_FILE);
        if !chain_path.exists() {
            return Err(ChainError::NoChain(dir.to_path_buf()));
        }
        let genesis: GenesisConfig = read_json(&dir.join(GENESIS_FILE))?;
        genesis.validate()?;
        if genesis.validators.len() != 1 {
            return Err(ChainError::NotSingleValidator(genesis.validators.len()));
        }
        let key = read_json::<KeyFile>(&dir.join(VALIDATOR_FILE))?.to_keypair()?;
        if genesis.validators[0] != key.public_key() {
            return Err(ChainError::ValidatorMismatch);
        }
        let validators = genesis.validator_set()?;
        let registry = genesis.registry();

        let bytes = fs::read(&chain_path).map_err(io_err(&chain_path))?;
        let blocks =
            verify_chain_stream(&bytes, &validators, &registry).map_err(ChainError::Corrupt)?;
        let mut state = genesis.initial_state();
        match blocks.first() {
            Some(b0) if b0.header.state_root == state.root() && b0.transactions.is_empty() => {}
            _ => return Err(ChainError::GenesisMismatch),
        }
        for b in &blocks[1..] {
            state.apply_all(&b.transactions, b.header.height, b.header.timestamp);
            if state.root() != b.header.state_root {
                return Err(ChainError::StateRootMismatch(b.header.height));
            }
        }
        Ok(LocalChain {
            dir: dir.to_path_buf(),
            genesis,
            key,
            validators,
            registry,
            blocks,
            state,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn genesis(&self) -> &GenesisConfig {
        &self.genesis
    }

    pub fn validators(&self) -> &ValidatorSet {
        &self.validators
    }

    pub fn registry(&self) -> &KeyRegistry {
        &self.registry
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn artifacts(&self) -> Result<ArtifactStore, ChainError> {
        let p = self.dir.join(ARTIFACTS_DIR);
        ArtifactStore::open(&p).map_err(io_err(&p))
    }

    /// Signs `req` as `key`, filling in the nonce from current state.
    pub fn sign_request(&self, key: &Keypair, req: PayloadRequest) -> Transaction {
        let nonce = req
            .nonce
            .unwrap_or_else(|| self.state.nonce(&key.address()));
        UnsignedTransaction::new(key.address(), nonce, req.payload, req.value)
            .sign(key)
            .expect("signing with the sender's own key")
    }

    /// Applies `tx` in a new block of its own and appends it to the store.
    /// Reverted transactions are recorded too.
    pub fn submit(&mut self, tx: Transaction) -> Result<Receipt, ChainError> {
        match tx.verify(&self.registry) {
            Ok(true) => {}
            Ok(false) => return Err(ChainError::BadSignature),
            Err(e) => return Err(ChainError::UnknownSender(e.0)),
        }
        let parent = &self.blocks.last().expect("genesis").header;
        let height = parent.height + 1;
        let tick = parent.timestamp + 1;
        let mut next = self.state.clone();
        let receipt = next.apply(
            &tx,
            &ApplyContext {
                block_height: height,
                tick,
                tx_index: 0,
            },
        );
        let mut block = build_block(parent, vec![tx], next.root(), self.key.address(), tick);
        block.votes = vec![Vote::sign(&block.hash(), &self.key)];

        let mut e = Encoder::new();
        e.bytes(&block.canonical_bytes());
        let chain_path = self.dir.join(CHAIN_FILE);
        let mut f = OpenOptions::new()
            .append(true)
            .open(&chain_path)
            .map_err(io_err(&chain_path))?;
        f.write_all(&e.finish()).map_err(io_err(&chain_path))?;
        f.sync_data().map_err(io_err(&chain_path))?;

        self.blocks.push(block);
        self.state = next;
        Ok(receipt)
    }

    pub fn block(&self, height: u64) -> Result<&Block, ChainError> {
        self.blocks
            .get(height as usize)
            .ok_or(ChainError::UnknownBlock(height))
    }

    pub fn case(&self, id: &CaseId) -> Result<CaseView, ChainError> {
        let reg = &self.state.registry;
        let case = reg
            .cases
            .get(id)
            .ok_or(WorkflowError::UnknownCase(*id))?
            .clone();
        let executions: Vec<ExecutionRecord> = reg.executions_of(id).into_iter().cloned().collect();
        let mut feedback: Vec<Feedback> = reg
            .feedback
            .values()
            .filter(|f| match f.subject {
                Subject::Case(c) => c == *id,
                Subject::Execution(e) => executions.iter().any(|x| x.exec_id == e),
            })
            .cloned()
            .collect();
        feedback.sort_by_key(|f| f.stamp.position());
        Ok(CaseView {
            case,
            executions,
            feedback,
        })
    }

    pub fn audit(&self, id: &CaseId) -> Result<Vec<AuditEntry>, ChainError> {
        Ok(audit_trail(&self.state, id)?)
    }

    pub fn compensation(&self, q: &CompensationQuery) -> Result<CompensationStatement, ChainError> {
        Ok(compute_compensation(&self.state, self.height(), q)?)
    }

    pub fn proof(&self, height: u64, tx_index: u64) -> Result<ProofView, ChainError> {
        let block = self.block(height)?;
        let proof = block
            .merkle_proof(tx_index)
            .map_err(|_| ChainError::UnknownTx {
                height,
                index: tx_index,
            })?;
        let tx_hash = block.transactions[tx_index as usize].hash();
        let valid = verify_merkle_proof(&tx_hash, &proof, &block.header.merkle_root);
        Ok(ProofView {
            height,
            tx_index,
            tx_hash,
            merkle_root: block.header.merkle_root,
            proof,
            valid,
        })
    }
}
