//! Deterministic state-transition machine for the agreement and acceptance
//! contracts plus the test-lifecycle payloads.
//!
//! Every operation performs all of its `require` checks before touching
//! state, so a revert never needs a rollback: the only mutation that
//! survives a revert is the sender's nonce increment.

mod contracts;
mod state;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::crypto::{hash_concat, Address, Digest};
use crate::tx::{ContractId, Payload, Transaction};
use crate::workflow::Verdict;

pub use state::{
    AcceptanceTestState, AccountState, CustomerAgreementState, DeveloperAgreementState, EventStamp,
    StateKey, WorldState,
};

/// Upper bound on the encoded size of a payload.
pub const MAX_PAYLOAD_BYTES: usize = 64 * 1024;

/// Byte-exact revert reasons.
pub mod reasons {
    pub const ONLY_CUSTOMER_SET_FEE: &str = "Only customer can set the fee";
    pub const ONLY_DEVELOPER_SET_REWARD: &str = "Only developer can set the reward";
    pub const ONLY_CUSTOMER_INITIATE: &str = "Only customer can initiate the acceptance test";
    pub const ONLY_DEVELOPER_COMPLETE: &str = "Only developer can complete the acceptance test";
    pub const FEE_NOT_PAID: &str = "Testing fee should be paid";
    pub const INSUFFICIENT_BALANCE: &str = "insufficient balance";
    pub const ALREADY_FUNDED: &str = "test already funded";
    pub const ALREADY_COMPLETED: &str = "test already completed";
    pub const NOT_FUNDED: &str = "test not funded";
    pub const RESULTS_NOT_VERIFIED: &str = "results not verified";
    pub const UNKNOWN_CONTRACT: &str = "unknown contract";
    pub const UNKNOWN_ACCOUNT: &str = "unknown account";
    pub const UNKNOWN_TEST_CASE: &str = "unknown test case";
    pub const UNKNOWN_SUBJECT: &str = "unknown subject";
    pub const UNKNOWN_PAYLOAD: &str = "unknown payload";
    pub const PAYLOAD_TOO_LARGE: &str = "payload too large";
    pub const BAD_NONCE: &str = "bad nonce";
    pub const NOT_PAYABLE: &str = "function is not payable";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Revert(pub &'static str);

/// Where a transaction sits in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ApplyContext {
    pub block_height: u64,
    pub tick: u64,
    pub tx_index: u32,
}

/// Per-call view handed to contract operations.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CallContext {
    pub sender: Address,
    /// The nonce the transaction carried (before increment).
    pub nonce: u64,
    pub value: u64,
    pub stamp: EventStamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum ReceiptStatus {
    Success,
    Reverted { reason: String },
}

/// Identifier created by a successful call, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReceiptOutput {
    None,
    Contract { contract_id: ContractId },
    TestCase { case_id: Digest },
    Execution { exec_id: Digest, verdict: Verdict },
    Feedback { feedback_id: Digest },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_hash: Digest,
    #[serde(flatten)]
    pub status: ReceiptStatus,
    /// Digest of the post-values of every state entry the call touched.
    pub state_delta_digest: Digest,
    pub output: ReceiptOutput,
}

impl Receipt {
    pub fn is_success(&self) -> bool {
        self.status == ReceiptStatus::Success
    }

    pub fn revert_reason(&self) -> Option<&str> {
        match &self.status {
            ReceiptStatus::Reverted { reason } => Some(reason),
            ReceiptStatus::Success => None,
        }
    }
}

/// `hash256(sender ‖ nonce ‖ tag)`.
pub fn derive_id(sender: &Address, nonce: u64, tag: u8) -> Digest {
    hash_concat(&[&sender.0, &nonce.to_be_bytes(), &[tag]])
}

impl WorldState {
    /// Applies `tx` in place. Signature checks are the caller's job.
    pub fn apply(&mut self, tx: &Transaction, ctx: &ApplyContext) -> Receipt {
        let tx_hash = tx.hash();
        let mut touched = BTreeSet::new();
        let result = self.execute(tx, tx_hash, ctx, &mut touched);
        let state_delta_digest = self.delta_digest(&touched);
        let (status, output) = match result {
            Ok(output) => (ReceiptStatus::Success, output),
            Err(Revert(reason)) => (
                ReceiptStatus::Reverted {
                    reason: reason.to_string(),
                },
                ReceiptOutput::None,
            ),
        };
        Receipt {
            tx_hash,
            status,
            state_delta_digest,
            output,
        }
    }

    fn execute(
        &mut self,
        tx: &Transaction,
        tx_hash: Digest,
        ctx: &ApplyContext,
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<ReceiptOutput, Revert> {
        let account = self
            .accounts
            .get_mut(&tx.sender)
            .ok_or(Revert(reasons::UNKNOWN_ACCOUNT))?;
        if account.nonce != tx.nonce {
            return Err(Revert(reasons::BAD_NONCE));
        }
        account.nonce = account
            .nonce
            .checked_add(1)
            .ok_or(Revert(reasons::BAD_NONCE))?;
        touched.insert(StateKey::Account(tx.sender));

        if tx.payload.encoded_len() > MAX_PAYLOAD_BYTES {
            return Err(Revert(reasons::PAYLOAD_TOO_LARGE));
        }
        if tx.value != 0 && !matches!(tx.payload, Payload::InitiateTest { .. }) {
            return Err(Revert(reasons::NOT_PAYABLE));
        }

        let call = CallContext {
            sender: tx.sender,
            nonce: tx.nonce,
            value: tx.value,
            stamp: EventStamp {
                block_height: ctx.block_height,
                tick: ctx.tick,
                tx_index: ctx.tx_index,
                tx_hash,
                actor: tx.sender,
            },
        };

        match &tx.payload {
            Payload::DeployCustomerAgreement => self
                .deploy_customer_agreement(&call, touched)
                .map(|contract_id| ReceiptOutput::Contract { contract_id }),
            Payload::SetTestingFee { contract, fee } => self
                .set_testing_fee(&call, contract, *fee, touched)
                .map(|_| ReceiptOutput::None),
            Payload::DeployDeveloperAgreement => self
                .deploy_developer_agreement(&call, touched)
                .map(|contract_id| ReceiptOutput::Contract { contract_id }),
            Payload::SetReward { contract, amount } => self
                .set_reward(&call, contract, *amount, touched)
                .map(|_| ReceiptOutput::None),
            Payload::DeployAcceptanceTest {
                customer,
                developer,
                fee,
            } => self
                .deploy_acceptance_test(&call, customer, developer, *fee, touched)
                .map(|contract_id| ReceiptOutput::Contract { contract_id }),
            Payload::InitiateTest { contract } => self
                .initiate_test(&call, contract, touched)
                .map(|_| ReceiptOutput::None),
            Payload::CompleteTest { contract } => self
                .complete_test(&call, contract, touched)
                .map(|_| ReceiptOutput::None),
            Payload::RegisterTestCase {
                contract,
                description,
                input_digest,
                expected_output_digest,
            } => self
                .register_test_case(
                    &call,
                    contract,
                    description,
                    input_digest,
                    expected_output_digest,
                    touched,
                )
                .map(|case_id| ReceiptOutput::TestCase { case_id }),
            Payload::RecordExecution {
                case_id,
                actual_output_digest,
            } => self
                .record_execution(&call, case_id, actual_output_digest, touched)
                .map(|(exec_id, verdict)| ReceiptOutput::Execution { exec_id, verdict }),
            Payload::PostFeedback { subject, body } => self
                .post_feedback(&call, subject, body, touched)
                .map(|feedback_id| ReceiptOutput::Feedback { feedback_id }),
            Payload::Unknown { .. } => Err(Revert(reasons::UNKNOWN_PAYLOAD)),
        }
    }

    /// Applies a sequence of transactions as one block.
    pub fn apply_all(&mut self, txs: &[Transaction], height: u64, tick: u64) -> Vec<Receipt> {
        txs.iter()
            .enumerate()
            .map(|(i, tx)| {
                self.apply(
                    tx,
                    &ApplyContext {
                        block_height: height,
                        tick,
                        tx_index: i as u32,
                    },
                )
            })
            .collect()
    }
}

/// Functional form: returns the successor state and the receipt.
pub fn apply_transaction(
    state: &WorldState,
    tx: &Transaction,
    ctx: &ApplyContext,
) -> (WorldState, Receipt) {
    let mut next = state.clone();
    let receipt = next.apply(tx, ctx);
    (next, receipt)
}

pub fn state_root(state: &WorldState) -> Digest {
    state.root()
}
