use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::{hash256, hash_concat, Digest, Keypair, PublicKey};
use crate::tx::{tags, Payload, Transaction, UnsignedTransaction};
use crate::vm::derive_id;

/// Exact probability `num / den`. JSON form is `"num/den"` or a decimal
/// number with at most six fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probability {
    pub num: u64,
    pub den: u64,
}

impl Probability {
    pub const ZERO: Probability = Probability { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Probability, ProbabilityError> {
        if den == 0 || num > den {
            return Err(ProbabilityError(format!("{num}/{den}")));
        }
        Ok(Probability { num, den })
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn from_decimal(s: &str) -> Result<Probability, ProbabilityError> {
        let err = || ProbabilityError(s.to_string());
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 6 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| err())?
        };
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| err())?
        };
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(err)?;
        Probability::new(num, den).map_err(|_| err())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid probability {0:?}")]
pub struct ProbabilityError(String);

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Probability {
    type Err = ProbabilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((n, d)) => {
                let n = n.trim().parse().map_err(|_| ProbabilityError(s.into()))?;
                let d = d.trim().parse().map_err(|_| ProbabilityError(s.into()))?;
                Probability::new(n, d)
            }
            None => Probability::from_decimal(s.trim()),
        }
    }
}

impl Serialize for Probability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(serde_json::Number),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Text(s) => s,
            Raw::Number(n) => n.to_string(),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latency {
    pub min: u64,
    pub max: u64,
}

/// Nodes in different groups cannot exchange messages during
/// `[from_tick, to_tick)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub from_tick: u64,
    pub to_tick: u64,
    pub groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn active(&self, tick: u64) -> bool {
        self.from_tick <= tick && tick < self.to_tick
    }

    pub fn separates(&self, a: usize, b: usize) -> bool {
        let side = |n: usize| self.groups.iter().position(|g| g.contains(&n));
        side(a) != side(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashFault {
    pub node: usize,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisAccount {
    pub public_key: PublicKey,
    pub balance: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedTx {
    pub tick: u64,
    /// Canonical transaction encoding, hex.
    #[serde(with = "tx_hex")]
    pub tx: Transaction,
}

mod tx_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::tx::Transaction;

    pub fn serialize<S: Serializer>(tx: &Transaction, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(tx.canonical_bytes()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Transaction, D::Error> {
        let s = String::deserialize(d)?;
        let raw = hex::decode(s.trim_start_matches("0x")).map_err(serde::de::Error::custom)?;
        Transaction::from_bytes(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    /// Pre-signed transactions with their submission ticks.
    Explicit {
        accounts: Vec<GenesisAccount>,
        txs: Vec<TimedTx>,
    },
    /// Acceptance engagements generated from the scenario seed: deploy,
    /// register a case, record a passing execution, fund, complete.
    Generated {
        accounts: usize,
        engagements: usize,
        #[serde(default)]
        start_tick: u64,
        interval_ticks: u64,
        #[serde(default = "default_balance")]
        balance: u64,
        #[serde(default = "default_fee")]
        fee: u64,
    },
}

fn default_balance() -> u64 {
    1_000_000
}

fn default_fee() -> u64 {
    100
}

impl Default for Workload {
    fn default() -> Self {
        Workload::Explicit {
            accounts: Vec::new(),
            txs: Vec::new(),
        }
    }
}

/// Key of generated account `i` for scenario seed `seed`.
pub fn account_key(seed: u64, i: usize) -> Keypair {
    Keypair::derive("testingplus/account", seed, i as u64)
}

/// Key of validator `i` for scenario seed `seed`.
pub fn validator_key(seed: u64, i: usize) -> Keypair {
    Keypair::derive("testingplus/validator", seed, i as u64)
}

/// Genesis accounts and the timed transaction list.
pub struct MaterializedWorkload {
    pub accounts: Vec<GenesisAccount>,
    pub txs: Vec<TimedTx>,
}

impl Workload {
    pub fn materialize(&self, seed: u64) -> MaterializedWorkload {
        match self {
            Workload::Explicit { accounts, txs } => MaterializedWorkload {
                accounts: accounts.clone(),
                txs: txs.clone(),
            },
            Workload::Generated {
                accounts,
                engagements,
                start_tick,
                interval_ticks,
                balance,
                fee,
            } => generate(
                seed,
                *accounts,
                *engagements,
                *start_tick,
                *interval_ticks,
                *balance,
                *fee,
            ),
        }
    }
}

struct Generator {
    keys: Vec<Keypair>,
    nonces: Vec<u64>,
    txs: Vec<TimedTx>,
    tick: u64,
    interval: u64,
}

impl Generator {
    fn push(&mut self, who: usize, payload: Payload, value: u64) {
        let k = &self.keys[who];
        let tx = UnsignedTransaction::new(k.address(), self.nonces[who], payload, value)
            .sign(k)
            .expect("own key");
        self.nonces[who] += 1;
        self.txs.push(TimedTx {
            tick: self.tick,
            tx,
        });
        self.tick += self.interval;
    }
}

fn generate(
    seed: u64,
    n_accounts: usize,
    engagements: usize,
    start_tick: u64,
    interval: u64,
    balance: u64,
    fee: u64,
) -> MaterializedWorkload {
    let n_accounts = n_accounts.max(3);
    let mut g = Generator {
        keys: (0..n_accounts).map(|i| account_key(seed, i)).collect(),
        nonces: vec![0; n_accounts],
        txs: Vec::new(),
        tick: start_tick,
        interval,
    };
    for e in 0..engagements {
        let customer = (3 * e) % n_accounts;
        let developer = (3 * e + 1) % n_accounts;
        let tester = (3 * e + 2) % n_accounts;
        let (c_addr, d_addr, t_addr) = (
            g.keys[customer].address(),
            g.keys[developer].address(),
            g.keys[tester].address(),
        );
        let expected = hash256(&[&seed.to_be_bytes()[..], &(e as u64).to_be_bytes()].concat());
        let contract = derive_id(&c_addr, g.nonces[customer], tags::DEPLOY_ACCEPTANCE_TEST);
        g.push(
            customer,
            Payload::DeployAcceptanceTest {
                customer: c_addr,
                developer: d_addr,
                fee,
            },
            0,
        );
        let case_id = hash_concat(&[&t_addr.0, &g.nonces[tester].to_be_bytes(), &expected.0]);
        g.push(
            tester,
            Payload::RegisterTestCase {
                contract,
                description: format!("engagement {e}").into_bytes(),
                input_digest: hash256(&(e as u64).to_be_bytes()),
                expected_output_digest: expected,
            },
            0,
        );
        g.push(
            tester,
            Payload::RecordExecution {
                case_id,
                actual_output_digest: expected,
            },
            0,
        );
        g.push(customer, Payload::InitiateTest { contract }, fee);
        g.push(developer, Payload::CompleteTest { contract }, 0);
    }
    MaterializedWorkload {
        accounts: g
            .keys
            .iter()
            .map(|k| GenesisAccount {
                public_key: k.public_key(),
                balance,
            })
            .collect(),
        txs: g.txs,
    }
}

/// A seeded fault-injection run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimScenario {
    pub seed: u64,
    pub n_validators: usize,
    pub latency: Latency,
    #[serde(default = "zero_probability")]
    pub drop_probability: Probability,
    #[serde(default)]
    pub partitions: Vec<Partition>,
    #[serde(default)]
    pub crash_faults: Vec<CrashFault>,
    #[serde(default)]
    pub workload: Workload,
    pub max_ticks: u64,
    #[serde(default = "default_empty_block_interval")]
    pub empty_block_interval: u64,
    /// Defaults to ten times the maximum latency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ticks: Option<u64>,
    #[serde(default = "default_max_block_txs")]
    pub max_block_txs: usize,
}

fn zero_probability() -> Probability {
    Probability::ZERO
}

fn default_empty_block_interval() -> u64 {
    50
}

fn default_max_block_txs() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("n_validators must be at least 1")]
    NoValidators,
    #[error("latency must satisfy 1 <= min <= max")]
    Latency,
    #[error("partition {0} does not split the nodes into disjoint groups covering all of them")]
    Partition(usize),
    #[error("crash fault {0} names an unknown node")]
    CrashNode(usize),
    #[error("max_block_txs must be at least 1")]
    BlockSize,
    #[error("workload transaction {0} is not signed by a genesis account")]
    WorkloadSigner(usize),
}

impl SimScenario {
    pub fn timeout(&self) -> u64 {
        self.timeout_ticks.unwrap_or(10 * self.latency.max).max(1)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.n_validators;
        if n == 0 {
            return Err(ScenarioError::NoValidators);
        }
        if self.latency.min == 0 || self.latency.min > self.latency.max {
            return Err(ScenarioError::Latency);
        }
        if self.max_block_txs == 0 {
            return Err(ScenarioError::BlockSize);
        }
        for (i, p) in self.partitions.iter().enumerate() {
            let mut all: Vec<usize> = p.groups.iter().flatten().copied().collect();
            all.sort_unstable();
            if all != (0..n).collect::<Vec<_>>() || p.from_tick > p.to_tick {
                return Err(ScenarioError::Partition(i));
            }
        }
        for (i, c) in self.crash_faults.iter().enumerate() {
            if c.node >= n {
                return Err(ScenarioError::CrashNode(i));
            }
        }
        Ok(())
    }

    /// Hash of the canonical JSON form.
    pub fn digest(&self) -> Digest {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        let mut e = Encoder::new();
        e.fixed(b"tp/scenario").bytes(&json);
        hash256(&e.finish())
    }
}
