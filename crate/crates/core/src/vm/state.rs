use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::Encoder;
use crate::crypto::{hash256, Address, Digest};
use crate::tx::ContractId;
use crate::workflow::TestRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountState {
    pub address: Address,
    pub balance: u64,
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomerAgreementState {
    pub contract_id: ContractId,
    pub customer: Address,
    pub testing_fee: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeveloperAgreementState {
    pub contract_id: ContractId,
    pub developer: Address,
    pub reward: u64,
}

/// Escrowed acceptance engagement. `escrow` is either 0 or `testing_fee`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceTestState {
    pub contract_id: ContractId,
    pub customer: Address,
    pub developer: Address,
    pub testing_fee: u64,
    pub is_test_completed: bool,
    pub escrow: u64,
    /// Set by the successful `complete_test` call.
    pub settlement: Option<EventStamp>,
}

/// Chain position and actor of a state-changing call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStamp {
    pub block_height: u64,
    pub tick: u64,
    pub tx_index: u32,
    pub tx_hash: Digest,
    pub actor: Address,
}

impl EventStamp {
    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.u64(self.block_height)
            .u64(self.tick)
            .u32(self.tx_index)
            .fixed(&self.tx_hash.0)
            .fixed(&self.actor.0);
    }

    /// Chain order of the originating transaction.
    pub fn position(&self) -> (u64, u32) {
        (self.block_height, self.tx_index)
    }
}

/// Addresses one entry of the world state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StateKey {
    AcceptanceTest(ContractId),
    Account(Address),
    CustomerAgreement(ContractId),
    DeveloperAgreement(ContractId),
    Execution(Digest),
    Feedback(Digest),
    Meta,
    TestCase(Digest),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorldState {
    pub chain_id: Digest,
    pub accounts: BTreeMap<Address, AccountState>,
    pub customer_agreements: BTreeMap<ContractId, CustomerAgreementState>,
    pub developer_agreements: BTreeMap<ContractId, DeveloperAgreementState>,
    pub acceptance_tests: BTreeMap<ContractId, AcceptanceTestState>,
    pub registry: TestRegistry,
    pub next_contract_seq: u64,
}

const META_CHAIN_ID: &[u8] = b"chain_id";
const META_NEXT_SEQ: &[u8] = b"next_contract_seq";

impl WorldState {
    /// Genesis state with the given balances. Duplicate addresses merge.
    pub fn genesis(chain_id: Digest, balances: impl IntoIterator<Item = (Address, u64)>) -> Self {
        let mut s = WorldState {
            chain_id,
            ..Default::default()
        };
        for (address, balance) in balances {
            s.accounts
                .entry(address)
                .or_insert(AccountState {
                    address,
                    balance: 0,
                    nonce: 0,
                })
                .balance += balance;
        }
        s
    }

    pub fn account(&self, addr: &Address) -> Option<&AccountState> {
        self.accounts.get(addr)
    }

    pub fn balance(&self, addr: &Address) -> u64 {
        self.accounts.get(addr).map_or(0, |a| a.balance)
    }

    pub fn nonce(&self, addr: &Address) -> u64 {
        self.accounts.get(addr).map_or(0, |a| a.nonce)
    }

    /// Σ balances + Σ escrow, widened so it cannot overflow.
    pub fn total_currency(&self) -> u128 {
        let balances: u128 = self.accounts.values().map(|a| a.balance as u128).sum();
        let escrow: u128 = self
            .acceptance_tests
            .values()
            .map(|t| t.escrow as u128)
            .sum();
        balances + escrow
    }

    fn map_name(key: &StateKey) -> &'static str {
        match key {
            StateKey::AcceptanceTest(_) => "acceptance_tests",
            StateKey::Account(_) => "accounts",
            StateKey::CustomerAgreement(_) => "customer_agreements",
            StateKey::DeveloperAgreement(_) => "developer_agreements",
            StateKey::Execution(_) => "executions",
            StateKey::Feedback(_) => "feedback",
            StateKey::Meta => "meta",
            StateKey::TestCase(_) => "test_cases",
        }
    }

    /// Encoded value of one entry, `None` if absent.
    fn entry_value(&self, key: &StateKey) -> Option<Vec<u8>> {
        let mut e = Encoder::new();
        match key {
            StateKey::Account(a) => {
                let acc = self.accounts.get(a)?;
                e.fixed(&acc.address.0).u64(acc.balance).u64(acc.nonce);
            }
            StateKey::CustomerAgreement(id) => {
                let c = self.customer_agreements.get(id)?;
                e.fixed(&c.contract_id.0)
                    .fixed(&c.customer.0)
                    .u64(c.testing_fee);
            }
            StateKey::DeveloperAgreement(id) => {
                let d = self.developer_agreements.get(id)?;
                e.fixed(&d.contract_id.0)
                    .fixed(&d.developer.0)
                    .u64(d.reward);
            }
            StateKey::AcceptanceTest(id) => {
                let t = self.acceptance_tests.get(id)?;
                e.fixed(&t.contract_id.0)
                    .fixed(&t.customer.0)
                    .fixed(&t.developer.0)
                    .u64(t.testing_fee)
                    .bool(t.is_test_completed)
                    .u64(t.escrow);
                match &t.settlement {
                    None => {
                        e.u8(0);
                    }
                    Some(s) => {
                        e.u8(1);
                        s.encode(&mut e);
                    }
                }
            }
            StateKey::TestCase(id) => self.registry.cases.get(id)?.encode(&mut e),
            StateKey::Execution(id) => self.registry.executions.get(id)?.encode(&mut e),
            StateKey::Feedback(id) => self.registry.feedback.get(id)?.encode(&mut e),
            StateKey::Meta => {
                e.fixed(&self.chain_id.0).u64(self.next_contract_seq);
            }
        }
        Some(e.finish())
    }

    fn key_bytes(key: &StateKey) -> Vec<u8> {
        match key {
            StateKey::Account(a) => a.0.to_vec(),
            StateKey::AcceptanceTest(d)
            | StateKey::CustomerAgreement(d)
            | StateKey::DeveloperAgreement(d)
            | StateKey::Execution(d)
            | StateKey::Feedback(d)
            | StateKey::TestCase(d) => d.0.to_vec(),
            StateKey::Meta => Vec::new(),
        }
    }

    /// All keys grouped by map, in canonical (map name, key) order.
    fn sorted_keys(&self) -> Vec<(&'static str, Vec<StateKey>)> {
        let groups: [Vec<StateKey>; 8] = [
            self.acceptance_tests
                .keys()
                .map(|k| StateKey::AcceptanceTest(*k))
                .collect(),
            self.accounts
                .keys()
                .map(|k| StateKey::Account(*k))
                .collect(),
            self.customer_agreements
                .keys()
                .map(|k| StateKey::CustomerAgreement(*k))
                .collect(),
            self.developer_agreements
                .keys()
                .map(|k| StateKey::DeveloperAgreement(*k))
                .collect(),
            self.registry
                .executions
                .keys()
                .map(|k| StateKey::Execution(*k))
                .collect(),
            self.registry
                .feedback
                .keys()
                .map(|k| StateKey::Feedback(*k))
                .collect(),
            vec![StateKey::Meta],
            self.registry
                .cases
                .keys()
                .map(|k| StateKey::TestCase(*k))
                .collect(),
        ];
        const NAMES: [&str; 8] = [
            "acceptance_tests",
            "accounts",
            "customer_agreements",
            "developer_agreements",
            "executions",
            "feedback",
            "meta",
            "test_cases",
        ];
        NAMES.into_iter().zip(groups).collect()
    }

    /// Canonical serialization: for each map in name order,
    /// `bytes(name) ‖ u32 count ‖ (bytes(key) ‖ bytes(value))*`.
    /// The meta map holds the chain id and the contract sequence counter.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(1024);
        for (name, group) in self.sorted_keys() {
            e.bytes(name.as_bytes());
            if name == "meta" {
                e.u32(2)
                    .bytes(META_CHAIN_ID)
                    .bytes(&self.chain_id.0)
                    .bytes(META_NEXT_SEQ)
                    .bytes(&self.next_contract_seq.to_be_bytes());
                continue;
            }
            e.u32(group.len() as u32);
            for key in &group {
                let value = self.entry_value(key).expect("key enumerated from state");
                e.bytes(&Self::key_bytes(key)).bytes(&value);
            }
        }
        e.finish()
    }

    pub fn root(&self) -> Digest {
        hash256(&self.canonical_bytes())
    }

    /// Digest over `(map, key, present?, value)` for each touched key.
    pub(crate) fn delta_digest(&self, touched: &BTreeSet<StateKey>) -> Digest {
        let mut e = Encoder::new();
        for key in touched {
            e.bytes(Self::map_name(key).as_bytes())
                .bytes(&Self::key_bytes(key));
            match self.entry_value(key) {
                Some(v) => {
                    e.u8(1).bytes(&v);
                }
                None => {
                    e.u8(0);
                }
            }
        }
        hash256(&e.finish())
    }
}
