//! Acceptance criteria. Prints one PASS/FAIL line per criterion and fails
//! if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use testingplus::block::{encode_chain_stream, split_chain_stream};
use testingplus::consensus::{
    run_simulation, signed_genesis, CrashFault, GenesisAccount, Latency, Partition, Probability,
    SimScenario, TimedTx, Workload,
};
use testingplus::crypto::hash_concat;
use testingplus::metrics::{run_sweep, sweep_csv, SweepAxis, SweepSpec, SWEEP_CSV_HEADER};
use testingplus::tx::tags;
use testingplus::vm::derive_id;
use testingplus::{
    build_block, compute_compensation, hash256, verify_chain, verify_chain_stream, Address, Block,
    CompensationQuery, Digest, KeyRegistry, Keypair, Payload, Transaction, UnsignedTransaction,
    ValidatorSet, Verdict, Vote, WorldState,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn sign(k: &Keypair, nonce: u64, payload: Payload, value: u64) -> Transaction {
    UnsignedTransaction::new(k.address(), nonce, payload, value)
        .sign(k)
        .unwrap()
}

fn genesis_of(keys: &[Keypair], balance: u64) -> WorldState {
    WorldState::genesis(
        hash256(b"acceptance"),
        keys.iter().map(|k| (k.address(), balance)),
    )
}

// ---------------------------------------------------------------------------
// Random transaction logs shared by several criteria.

struct LogGen {
    rng: ChaCha8Rng,
    keys: Vec<Keypair>,
    nonces: Vec<u64>,
    customer_agreements: Vec<Digest>,
    developer_agreements: Vec<Digest>,
    /// (id, customer, developer, fee)
    tests: Vec<(Digest, usize, usize, u64)>,
    /// (case id, expected digest)
    cases: Vec<(Digest, Digest)>,
    executions: Vec<Digest>,
    bad_nonces: bool,
}

impl LogGen {
    fn new(seed: u64, n_accounts: usize, bad_nonces: bool) -> LogGen {
        LogGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            keys: (0..n_accounts as u64)
                .map(|i| Keypair::derive("acceptance/account", seed, i))
                .collect(),
            nonces: vec![0; n_accounts],
            customer_agreements: vec![],
            developer_agreements: vec![],
            tests: vec![],
            cases: vec![],
            executions: vec![],
            bad_nonces,
        }
    }

    fn pick<T: Copy>(&mut self, v: &[T]) -> Option<T> {
        v.choose(&mut self.rng).copied()
    }

    fn any_digest(&mut self) -> Digest {
        Digest(self.rng.gen())
    }

    fn next(&mut self) -> Transaction {
        let n = self.keys.len();
        let mut who = self.rng.gen_range(0..n);
        let mut value = 0;
        let payload = match self.rng.gen_range(0..12) {
            0 => Payload::DeployCustomerAgreement,
            1 => match self.pick(&self.customer_agreements.clone()) {
                Some(contract) => Payload::SetTestingFee {
                    contract,
                    fee: self.rng.gen_range(0..100),
                },
                None => Payload::DeployCustomerAgreement,
            },
            2 => Payload::DeployDeveloperAgreement,
            3 => match self.pick(&self.developer_agreements.clone()) {
                Some(contract) => Payload::SetReward {
                    contract,
                    amount: self.rng.gen_range(0..100),
                },
                None => Payload::DeployDeveloperAgreement,
            },
            4 | 5 => {
                let dev = (who + self.rng.gen_range(1..n)) % n;
                Payload::DeployAcceptanceTest {
                    customer: self.keys[who].address(),
                    developer: self.keys[dev].address(),
                    fee: self.rng.gen_range(0..60),
                }
            }
            6 => match self.pick(&self.tests.clone()) {
                Some((contract, customer, _, fee)) => {
                    if self.rng.gen_bool(0.8) {
                        who = customer;
                    }
                    value = if self.rng.gen_bool(0.8) { fee } else { fee + 1 };
                    Payload::InitiateTest { contract }
                }
                None => Payload::DeployDeveloperAgreement,
            },
            7 => match self.pick(&self.tests.clone()) {
                Some((contract, _, developer, _)) => {
                    if self.rng.gen_bool(0.8) {
                        who = developer;
                    }
                    Payload::CompleteTest { contract }
                }
                None => Payload::DeployCustomerAgreement,
            },
            8 | 9 => match self.pick(&self.tests.clone()) {
                Some((contract, ..)) => {
                    let expected = self.any_digest();
                    let case_id = hash_concat(&[
                        &self.keys[who].address().0,
                        &self.nonces[who].to_be_bytes(),
                        &expected.0,
                    ]);
                    self.cases.push((case_id, expected));
                    Payload::RegisterTestCase {
                        contract,
                        description: b"case".to_vec(),
                        input_digest: self.any_digest(),
                        expected_output_digest: expected,
                    }
                }
                None => Payload::DeployDeveloperAgreement,
            },
            10 => match self.pick(&self.cases.clone()) {
                Some((case_id, expected)) => {
                    let actual = if self.rng.gen_bool(0.6) {
                        expected
                    } else {
                        self.any_digest()
                    };
                    self.executions.push(hash_concat(&[
                        &self.keys[who].address().0,
                        &self.nonces[who].to_be_bytes(),
                        &case_id.0,
                    ]));
                    Payload::RecordExecution {
                        case_id,
                        actual_output_digest: actual,
                    }
                }
                None => Payload::DeployCustomerAgreement,
            },
            _ => {
                let mut subjects: Vec<Digest> = self.cases.iter().map(|c| c.0).collect();
                subjects.extend(&self.executions);
                let subject = match self.pick(&subjects) {
                    Some(s) if self.rng.gen_bool(0.9) => s,
                    _ => self.any_digest(),
                };
                if self.rng.gen_bool(0.1) {
                    value = 1;
                }
                Payload::PostFeedback {
                    subject,
                    body: b"note".to_vec(),
                }
            }
        };
        let addr = self.keys[who].address();
        let mut nonce = self.nonces[who];
        if self.bad_nonces && self.rng.gen_bool(0.05) {
            nonce += 1;
        } else {
            let tag = match &payload {
                Payload::DeployCustomerAgreement => Some(tags::DEPLOY_CUSTOMER_AGREEMENT),
                Payload::DeployDeveloperAgreement => Some(tags::DEPLOY_DEVELOPER_AGREEMENT),
                Payload::DeployAcceptanceTest { .. } => Some(tags::DEPLOY_ACCEPTANCE_TEST),
                _ => None,
            };
            if let Some(tag) = tag {
                let id = derive_id(&addr, nonce, tag);
                match &payload {
                    Payload::DeployCustomerAgreement => self.customer_agreements.push(id),
                    Payload::DeployDeveloperAgreement => self.developer_agreements.push(id),
                    Payload::DeployAcceptanceTest { developer, fee, .. } => {
                        let dev = self.keys.iter().position(|k| k.address() == *developer);
                        self.tests.push((id, who, dev.unwrap(), *fee));
                    }
                    _ => unreachable!(),
                }
            }
            self.nonces[who] += 1;
        }
        sign(&self.keys[who], nonce, payload, value)
    }

    fn log(&mut self, len: usize) -> Vec<Transaction> {
        (0..len).map(|_| self.next()).collect()
    }
}

/// Applies `txs` in blocks of `per_block`, returning the final state.
fn replay(genesis: &WorldState, txs: &[Transaction], per_block: usize) -> WorldState {
    let mut s = genesis.clone();
    for (i, chunk) in txs.chunks(per_block).enumerate() {
        let h = i as u64 + 1;
        s.apply_all(chunk, h, h * 10);
    }
    s
}

// ---------------------------------------------------------------------------
// 1. Contract conformance.

struct Fixture {
    state: WorldState,
    customer: Keypair,
    developer: Keypair,
    customer_agreement: Digest,
    developer_agreement: Digest,
    test: Digest,
}

const FEE: u64 = 25;

fn conformance_fixture() -> Fixture {
    let customer = Keypair::derive("acceptance/customer", 0, 0);
    let developer = Keypair::derive("acceptance/developer", 0, 0);
    let mut state = genesis_of(&[customer.clone(), developer.clone()], 1_000);
    let txs = [
        sign(&customer, 0, Payload::DeployCustomerAgreement, 0),
        sign(&developer, 0, Payload::DeployDeveloperAgreement, 0),
        sign(
            &customer,
            1,
            Payload::DeployAcceptanceTest {
                customer: customer.address(),
                developer: developer.address(),
                fee: FEE,
            },
            0,
        ),
    ];
    for r in state.apply_all(&txs, 1, 1) {
        assert!(r.is_success());
    }
    Fixture {
        state,
        customer_agreement: derive_id(&customer.address(), 0, tags::DEPLOY_CUSTOMER_AGREEMENT),
        developer_agreement: derive_id(&developer.address(), 0, tags::DEPLOY_DEVELOPER_AGREEMENT),
        test: derive_id(&customer.address(), 1, tags::DEPLOY_ACCEPTANCE_TEST),
        customer,
        developer,
    }
}

enum Who {
    Customer,
    Developer,
}

struct Row {
    name: &'static str,
    /// Fund the acceptance test first.
    funded: bool,
    who: Who,
    payload: fn(&Fixture) -> Payload,
    value: u64,
    /// `None` for success, else the exact revert reason.
    reason: Option<&'static str>,
    check: fn(&Fixture, &WorldState) -> bool,
}

fn no_check(_: &Fixture, _: &WorldState) -> bool {
    true
}

fn conformance() -> Outcome {
    let rows = [
        Row {
            name: "setTestingFee by customer",
            funded: false,
            who: Who::Customer,
            payload: |f| Payload::SetTestingFee {
                contract: f.customer_agreement,
                fee: 40,
            },
            value: 0,
            reason: None,
            check: |f, s| s.customer_agreements[&f.customer_agreement].testing_fee == 40,
        },
        Row {
            name: "setTestingFee by other",
            funded: false,
            who: Who::Developer,
            payload: |f| Payload::SetTestingFee {
                contract: f.customer_agreement,
                fee: 40,
            },
            value: 0,
            reason: Some("Only customer can set the fee"),
            check: no_check,
        },
        Row {
            name: "setReward by developer",
            funded: false,
            who: Who::Developer,
            payload: |f| Payload::SetReward {
                contract: f.developer_agreement,
                amount: 9,
            },
            value: 0,
            reason: None,
            check: |f, s| s.developer_agreements[&f.developer_agreement].reward == 9,
        },
        Row {
            name: "setReward by other",
            funded: false,
            who: Who::Customer,
            payload: |f| Payload::SetReward {
                contract: f.developer_agreement,
                amount: 9,
            },
            value: 0,
            reason: Some("Only developer can set the reward"),
            check: no_check,
        },
        Row {
            name: "initiate by other",
            funded: false,
            who: Who::Developer,
            payload: |f| Payload::InitiateTest { contract: f.test },
            value: FEE,
            reason: Some("Only customer can initiate the acceptance test"),
            check: no_check,
        },
        Row {
            name: "initiate underpaid",
            funded: false,
            who: Who::Customer,
            payload: |f| Payload::InitiateTest { contract: f.test },
            value: FEE - 1,
            reason: Some("Testing fee should be paid"),
            check: no_check,
        },
        Row {
            name: "initiate overpaid",
            funded: false,
            who: Who::Customer,
            payload: |f| Payload::InitiateTest { contract: f.test },
            value: FEE + 1,
            reason: Some("Testing fee should be paid"),
            check: no_check,
        },
        Row {
            name: "initiate with fee",
            funded: false,
            who: Who::Customer,
            payload: |f| Payload::InitiateTest { contract: f.test },
            value: FEE,
            reason: None,
            check: |f, s| {
                s.acceptance_tests[&f.test].escrow == FEE
                    && s.balance(&f.customer.address()) == 1_000 - FEE
            },
        },
        Row {
            name: "complete by other",
            funded: true,
            who: Who::Customer,
            payload: |f| Payload::CompleteTest { contract: f.test },
            value: 0,
            reason: Some("Only developer can complete the acceptance test"),
            check: no_check,
        },
        Row {
            name: "complete by developer settles",
            funded: true,
            who: Who::Developer,
            payload: |f| Payload::CompleteTest { contract: f.test },
            value: 0,
            reason: None,
            check: |f, s| {
                let t = &s.acceptance_tests[&f.test];
                s.balance(&f.developer.address()) == 1_000 + FEE
                    && t.escrow == 0
                    && t.is_test_completed
                    && s.total_currency() == 2_000
            },
        },
    ];
    for row in &rows {
        let mut f = conformance_fixture();
        if row.funded {
            let r = f.state.apply(
                &sign(
                    &f.customer,
                    2,
                    Payload::InitiateTest { contract: f.test },
                    FEE,
                ),
                &Default::default(),
            );
            ensure!(r.is_success(), "{}: funding failed", row.name);
        }
        let key = match row.who {
            Who::Customer => &f.customer,
            Who::Developer => &f.developer,
        };
        let tx = sign(
            key,
            f.state.nonce(&key.address()),
            (row.payload)(&f),
            row.value,
        );
        let before = f.state.clone();
        let receipt = f.state.apply(&tx, &Default::default());
        ensure!(
            receipt.revert_reason() == row.reason,
            "{}: expected {:?}, got {:?}",
            row.name,
            row.reason,
            receipt.revert_reason()
        );
        if row.reason.is_some() {
            let mut expect = before.clone();
            expect.accounts.get_mut(&key.address()).unwrap().nonce += 1;
            ensure!(
                f.state == expect,
                "{}: revert changed more than the nonce",
                row.name
            );
        }
        ensure!(
            (row.check)(&f, &f.state),
            "{}: post-state check failed",
            row.name
        );
    }
    Ok(format!("{} require paths", rows.len()))
}

// ---------------------------------------------------------------------------
// 2. Tamper evidence.

fn fixture_chain(blocks: u64) -> (Vec<Block>, ValidatorSet, KeyRegistry) {
    let vkeys: Vec<Keypair> = (0..4)
        .map(|i| Keypair::derive("acceptance/validator", 2, i))
        .collect();
    let validators = ValidatorSet::new(vkeys.iter().map(Keypair::public_key).collect()).unwrap();
    let mut gen = LogGen::new(2, 5, false);
    let registry: KeyRegistry = gen.keys.iter().map(Keypair::public_key).collect();
    let mut state = genesis_of(&gen.keys, 1_000);
    let mut chain = vec![signed_genesis(&state, &vkeys)];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for h in 1..=blocks {
        let txs = gen.log(rng.gen_range(0..4));
        state.apply_all(&txs, h, h * 3);
        let proposer = vkeys[(h % 4) as usize].address();
        let mut b = build_block(
            &chain.last().unwrap().header,
            txs,
            state.root(),
            proposer,
            h * 3,
        );
        let hash = b.hash();
        let mut signers: Vec<&Keypair> = vkeys.iter().collect();
        signers.shuffle(&mut rng);
        let take = rng.gen_range(validators.quorum()..=4);
        b.votes = signers[..take]
            .iter()
            .map(|k| Vote::sign(&hash, k))
            .collect();
        chain.push(b);
    }
    (chain, validators, registry)
}

fn tamper_evidence() -> Outcome {
    let (chain, validators, registry) = fixture_chain(20);
    ensure!(chain.len() == 21, "fixture has {} blocks", chain.len());
    let stream = encode_chain_stream(&chain);
    ensure!(
        verify_chain_stream(&stream, &validators, &registry).is_ok(),
        "clean fixture chain rejected"
    );
    // Byte offset ranges of each record, length prefix included.
    let mut ranges = Vec::new();
    let mut at = 0;
    for rec in split_chain_stream(&stream).unwrap() {
        ranges.push(at..at + 4 + rec.len());
        at += 4 + rec.len();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a3e);
    let trials = 1200;
    for trial in 0..trials {
        let pos = rng.gen_range(0..stream.len());
        let flip: u8 = rng.gen_range(1..=255);
        let mut bytes = stream.clone();
        bytes[pos] ^= flip;
        let height = ranges.iter().position(|r| r.contains(&pos)).unwrap() as u64;
        match verify_chain_stream(&bytes, &validators, &registry) {
            Ok(_) => {
                return Err(format!(
                    "trial {trial}: byte {pos} (block {height}) undetected"
                ))
            }
            Err(e) => ensure!(
                e.height <= height,
                "trial {trial}: mutation in block {height} reported at {}",
                e.height
            ),
        }
    }
    Ok(format!(
        "{trials} mutations of a 20-block chain all flagged"
    ))
}

// ---------------------------------------------------------------------------
// 3. Determinism and replay.

fn determinism() -> Outcome {
    let mut reorders = 0;
    for seed in 0..100u64 {
        let mut gen = LogGen::new(seed, 5, true);
        let txs = gen.log(80);
        let genesis = genesis_of(&gen.keys, 1_000);
        let a = replay(&genesis, &txs, 8);
        let b = replay(&genesis, &txs, 8);
        ensure!(a.root() == b.root(), "seed {seed}: replays diverge");

        // Same sender and nonce: whichever comes first wins.
        let k = &gen.keys[0];
        let n = a.nonce(&k.address());
        let x = sign(k, n, Payload::DeployCustomerAgreement, 0);
        let y = sign(k, n, Payload::DeployDeveloperAgreement, 0);
        let mut xy = a.clone();
        xy.apply_all(&[x.clone(), y.clone()], 100, 1000);
        let mut yx = a.clone();
        yx.apply_all(&[y, x], 100, 1000);
        ensure!(
            xy.root() != yx.root(),
            "seed {seed}: nonce conflict reorder kept root"
        );

        // Funding before completion versus after.
        let (c, d) = (&gen.keys[1], &gen.keys[2]);
        let mut base = a.clone();
        let deploy = sign(
            c,
            base.nonce(&c.address()),
            Payload::DeployAcceptanceTest {
                customer: c.address(),
                developer: d.address(),
                fee: 5,
            },
            0,
        );
        let id = derive_id(&c.address(), deploy.nonce, tags::DEPLOY_ACCEPTANCE_TEST);
        base.apply_all(&[deploy], 100, 1000);
        if base.balance(&c.address()) >= 5 {
            let init = sign(
                c,
                base.nonce(&c.address()),
                Payload::InitiateTest { contract: id },
                5,
            );
            let done = sign(
                d,
                base.nonce(&d.address()),
                Payload::CompleteTest { contract: id },
                0,
            );
            let mut p = base.clone();
            p.apply_all(&[init.clone(), done.clone()], 101, 1010);
            let mut q = base.clone();
            q.apply_all(&[done, init], 101, 1010);
            ensure!(
                p.root() != q.root(),
                "seed {seed}: settlement reorder kept root"
            );
            reorders += 1;
        }
        reorders += 1;
    }
    Ok(format!(
        "100 logs replayed identically, {reorders} conflicting reorders changed the root"
    ))
}

// ---------------------------------------------------------------------------
// 4. Currency conservation.

fn explicit_scenario(seed: u64, n: usize, len: usize) -> (SimScenario, Vec<Keypair>) {
    let mut gen = LogGen::new(seed, 5, false);
    let txs = gen.log(len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut tick = 1;
    let timed = txs
        .into_iter()
        .map(|tx| {
            tick += rng.gen_range(0..4);
            TimedTx { tick, tx }
        })
        .collect();
    let sc = SimScenario {
        seed,
        n_validators: n,
        latency: Latency { min: 1, max: 5 },
        drop_probability: Probability::new(rng.gen_range(0..=10), 100).unwrap(),
        partitions: vec![],
        crash_faults: vec![],
        workload: Workload::Explicit {
            accounts: gen
                .keys
                .iter()
                .map(|k| GenesisAccount {
                    public_key: k.public_key(),
                    balance: 200,
                })
                .collect(),
            txs: timed,
        },
        max_ticks: 20_000,
        empty_block_interval: 50,
        timeout_ticks: None,
        max_block_txs: 16,
    };
    (sc, gen.keys)
}

fn conservation() -> Outcome {
    let mut blocks_checked = 0;
    for seed in 0..100u64 {
        let n = [1, 4][seed as usize % 2];
        let (sc, _) = explicit_scenario(1000 + seed, n, 60);
        let out = run_simulation(&sc).map_err(|e| e.to_string())?;
        let total = out.genesis_state.total_currency();
        for node in out.live_nodes() {
            ensure!(
                node.state().total_currency() == total,
                "seed {seed}: final total changed"
            );
            let mut s = out.genesis_state.clone();
            for b in &node.chain()[1..] {
                for (i, tx) in b.transactions.iter().enumerate() {
                    s.apply(
                        tx,
                        &testingplus::ApplyContext {
                            block_height: b.header.height,
                            tick: b.header.timestamp,
                            tx_index: i as u32,
                        },
                    );
                    ensure!(
                        s.total_currency() == total,
                        "seed {seed}: total changed at height {} tx {i}",
                        b.header.height
                    );
                }
                ensure!(
                    s.root() == b.header.state_root,
                    "seed {seed}: replay root differs"
                );
                blocks_checked += 1;
            }
        }
    }
    Ok(format!(
        "100 runs, {blocks_checked} blocks, supply constant after every transaction"
    ))
}

// ---------------------------------------------------------------------------
// 5. Consensus safety and liveness.

fn fault_scenario(seed: u64) -> SimScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = if seed.is_multiple_of(2) { 4 } else { 7 };
    let max_crashes = (n - 1) / 3;
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut rng);
    let crash_faults = nodes[..rng.gen_range(0..=max_crashes)]
        .iter()
        .map(|&node| CrashFault {
            node,
            tick: rng.gen_range(0..400),
        })
        .collect();
    let partitions = (0..rng.gen_range(0..=2))
        .map(|_| {
            let from = rng.gen_range(0..300);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let k = rng.gen_range(1..n);
            Partition {
                from_tick: from,
                to_tick: from + rng.gen_range(10..400),
                groups: vec![perm[..k].to_vec(), perm[k..].to_vec()],
            }
        })
        .collect();
    SimScenario {
        seed,
        n_validators: n,
        latency: Latency {
            min: 1,
            max: rng.gen_range(2..=8),
        },
        drop_probability: Probability::new(rng.gen_range(0..=20), 100).unwrap(),
        partitions,
        crash_faults,
        workload: Workload::Generated {
            accounts: 6,
            engagements: rng.gen_range(1..5),
            start_tick: rng.gen_range(0..100),
            interval_ticks: rng.gen_range(1..20),
            balance: 10_000,
            fee: 50,
        },
        max_ticks: 30_000,
        empty_block_interval: 50,
        timeout_ticks: None,
        max_block_txs: 256,
    }
}

fn consensus() -> Outcome {
    let count = 240u64;
    let mut crashes = 0;
    let mut partitions = 0;
    for seed in 0..count {
        let sc = fault_scenario(seed);
        crashes += sc.crash_faults.len();
        partitions += sc.partitions.len();
        let out = run_simulation(&sc).map_err(|e| e.to_string())?;
        ensure!(
            out.conflicts.is_empty(),
            "seed {seed}: conflicting commits {:?}",
            out.conflicts
        );
        ensure!(
            !out.truncated,
            "seed {seed}: not all transactions committed by max_ticks"
        );
        let live: Vec<_> = out.live_nodes().collect();
        for node in &live {
            for tx in &out.workload {
                ensure!(
                    node.has_committed(&tx.hash()),
                    "seed {seed}: node {} missing tx",
                    node.id()
                );
            }
            verify_chain(node.chain(), &out.validators, &out.registry)
                .map_err(|e| format!("seed {seed}: node {}: {e}", node.id()))?;
        }
        let shortest = live.iter().map(|n| n.chain().len()).min().unwrap();
        for h in 0..shortest {
            let first = live[0].chain()[h].hash();
            ensure!(
                live.iter().all(|n| n.chain()[h].hash() == first),
                "seed {seed}: nodes differ at height {h}"
            );
        }
    }
    Ok(format!(
        "{count} scenarios ({crashes} crashes, {partitions} healed partitions), no conflicts, all live nodes complete"
    ))
}

// ---------------------------------------------------------------------------
// 6. Workflow oracle equivalence.

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct OracleExec {
    id: Digest,
    case: Digest,
    tester: Address,
    height: u64,
    pass: bool,
}

struct OracleTest {
    customer: Address,
    developer: Address,
    fee: u64,
    escrow: u64,
    completed: bool,
}

/// Rescans a raw chain dump and re-derives every execution record from
/// first principles, without the VM.
fn oracle_executions(dump: &[u8], genesis: &[(Address, u64)]) -> Vec<OracleExec> {
    let mut nonce: BTreeMap<Address, u64> = genesis.iter().map(|(a, _)| (*a, 0)).collect();
    let mut balance: BTreeMap<Address, u64> = genesis.iter().copied().collect();
    let mut tests: BTreeMap<Digest, OracleTest> = BTreeMap::new();
    let mut cases: BTreeMap<Digest, (Digest, Digest)> = BTreeMap::new();
    let mut execs = Vec::new();
    let id = |parts: &[&[u8]]| {
        let mut buf = Vec::new();
        for p in parts {
            buf.extend_from_slice(p);
        }
        hash256(&buf)
    };
    for rec in split_chain_stream(dump).unwrap().iter().skip(1) {
        let block = Block::from_bytes(rec).unwrap();
        let height = block.header.height;
        for tx in &block.transactions {
            let s = tx.sender;
            match nonce.get_mut(&s) {
                Some(n) if *n == tx.nonce => *n += 1,
                _ => continue,
            }
            let payable = matches!(tx.payload, Payload::InitiateTest { .. });
            if tx.value != 0 && !payable {
                continue;
            }
            let nb = tx.nonce.to_be_bytes();
            match &tx.payload {
                Payload::DeployAcceptanceTest {
                    customer,
                    developer,
                    fee,
                } => {
                    if balance.contains_key(customer) && balance.contains_key(developer) {
                        tests.insert(
                            id(&[&s.0, &nb, &[0x05]]),
                            OracleTest {
                                customer: *customer,
                                developer: *developer,
                                fee: *fee,
                                escrow: 0,
                                completed: false,
                            },
                        );
                    }
                }
                Payload::InitiateTest { contract } => {
                    if let Some(t) = tests.get_mut(contract) {
                        let bal = balance[&s];
                        if s == t.customer
                            && tx.value == t.fee
                            && !t.completed
                            && t.escrow == 0
                            && bal >= tx.value
                        {
                            balance.insert(s, bal - tx.value);
                            t.escrow = tx.value;
                        }
                    }
                }
                Payload::CompleteTest { contract } => {
                    let verified =
                        cases
                            .iter()
                            .filter(|(_, (c, _))| c == contract)
                            .all(|(cid, _)| {
                                execs.iter().any(|e: &OracleExec| e.case == *cid && e.pass)
                            });
                    if let Some(t) = tests.get_mut(contract) {
                        if s == t.developer && !t.completed && t.escrow == t.fee && verified {
                            *balance.get_mut(&t.developer).unwrap() += t.fee;
                            t.escrow = 0;
                            t.completed = true;
                        }
                    }
                }
                Payload::RegisterTestCase {
                    contract,
                    description,
                    expected_output_digest,
                    ..
                } => {
                    if description.len() <= 4096
                        && tests.get(contract).is_some_and(|t| !t.completed)
                    {
                        cases.insert(
                            id(&[&s.0, &nb, &expected_output_digest.0]),
                            (*contract, *expected_output_digest),
                        );
                    }
                }
                Payload::RecordExecution {
                    case_id,
                    actual_output_digest,
                } => {
                    if let Some((_, expected)) = cases.get(case_id) {
                        execs.push(OracleExec {
                            id: id(&[&s.0, &nb, &case_id.0]),
                            case: *case_id,
                            tester: s,
                            height,
                            pass: expected == actual_output_digest,
                        });
                    }
                }
                _ => {}
            }
        }
    }
    execs
}

fn workflow_oracle() -> Outcome {
    let mut executions = 0;
    let mut queries = 0;
    for seed in 0..100u64 {
        let n = [1, 4][seed as usize % 2];
        let (sc, keys) = explicit_scenario(5000 + seed, n, 90);
        let out = run_simulation(&sc).map_err(|e| e.to_string())?;
        let node = out.live_nodes().next().unwrap();
        let state = node.state();
        let head = node.height();
        let dump = encode_chain_stream(node.chain());
        let genesis: Vec<(Address, u64)> = keys.iter().map(|k| (k.address(), 200)).collect();
        let mut oracle = oracle_executions(&dump, &genesis);
        oracle.sort();

        let mut actual: Vec<OracleExec> = state
            .registry
            .executions
            .values()
            .map(|e| OracleExec {
                id: e.exec_id,
                case: e.case_id,
                tester: e.tester,
                height: e.block_height,
                pass: e.verdict == Verdict::Pass,
            })
            .collect();
        actual.sort();
        ensure!(
            actual == oracle,
            "seed {seed}: execution records or verdicts differ"
        );
        executions += actual.len();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut windows = vec![(0, head), (head / 2, head)];
        for _ in 0..4 {
            let a = rng.gen_range(0..=head);
            windows.push((a, rng.gen_range(a..=head)));
        }
        for k in &keys {
            for &(from, to) in &windows {
                let (base, bonus) = (rng.gen_range(0..1000), rng.gen_range(0..1000));
                let got = compute_compensation(
                    state,
                    head,
                    &CompensationQuery {
                        tester: k.address(),
                        from_height: from,
                        to_height: to,
                        base_rate: base,
                        bonus_rate: bonus,
                    },
                )
                .map_err(|e| e.to_string())?;
                let in_window: Vec<&OracleExec> = oracle
                    .iter()
                    .filter(|e| (from..=to).contains(&e.height))
                    .collect();
                let mine: Vec<&&OracleExec> = in_window
                    .iter()
                    .filter(|e| e.tester == k.address())
                    .collect();
                let executed = mine.len() as u64;
                let matched = mine.iter().filter(|e| e.pass).count() as u64;
                let ppm = if in_window.is_empty() {
                    0
                } else {
                    (executed as u128 * 1_000_000 / in_window.len() as u128) as u64
                };
                let expect = (executed, matched, base * executed + bonus * matched, ppm);
                let seen = (got.executed, got.matched, got.amount, got.contribution_ppm);
                ensure!(
                    seen == expect,
                    "seed {seed}: window {from}..={to}: got {seen:?}, oracle {expect:?}"
                );
                queries += 1;
            }
        }
    }
    Ok(format!(
        "100 chains, {executions} executions and {queries} compensation queries match the rescan"
    ))
}

// ---------------------------------------------------------------------------
// 7. Settlement gating.

struct Gating {
    customer: Keypair,
    developer: Keypair,
    testers: Vec<Keypair>,
    contract: Digest,
    register: Vec<Transaction>,
    /// `exec[case][slot][pass as usize]`
    exec: Vec<Vec<[Transaction; 2]>>,
    complete: Transaction,
}

const MAX_CASES: usize = 4;
const MAX_EXECS: usize = 3;

fn gating_fixture() -> Gating {
    let customer = Keypair::derive("acceptance/gating", 0, 0);
    let developer = Keypair::derive("acceptance/gating", 0, 1);
    let testers: Vec<Keypair> = (0..MAX_CASES as u64)
        .map(|i| Keypair::derive("acceptance/gating", 1, i))
        .collect();
    let contract = derive_id(&customer.address(), 0, tags::DEPLOY_ACCEPTANCE_TEST);
    let mut register = Vec::new();
    let mut exec = Vec::new();
    for (i, t) in testers.iter().enumerate() {
        let expected = hash256(&[i as u8]);
        register.push(sign(
            t,
            0,
            Payload::RegisterTestCase {
                contract,
                description: vec![],
                input_digest: Digest::ZERO,
                expected_output_digest: expected,
            },
            0,
        ));
        let case_id = hash_concat(&[&t.address().0, &0u64.to_be_bytes(), &expected.0]);
        exec.push(
            (0..MAX_EXECS as u64)
                .map(|slot| {
                    let rec = |actual| Payload::RecordExecution {
                        case_id,
                        actual_output_digest: actual,
                    };
                    [
                        sign(t, slot + 1, rec(hash256(b"wrong")), 0),
                        sign(t, slot + 1, rec(expected), 0),
                    ]
                })
                .collect(),
        );
    }
    let complete = sign(&developer, 0, Payload::CompleteTest { contract }, 0);
    Gating {
        customer,
        developer,
        testers,
        contract,
        register,
        exec,
        complete,
    }
}

fn gating_base(g: &Gating) -> WorldState {
    let mut keys = vec![g.customer.clone(), g.developer.clone()];
    keys.extend(g.testers.iter().cloned());
    let mut s = genesis_of(&keys, 100);
    let txs = [
        sign(
            &g.customer,
            0,
            Payload::DeployAcceptanceTest {
                customer: g.customer.address(),
                developer: g.developer.address(),
                fee: 10,
            },
            0,
        ),
        sign(
            &g.customer,
            1,
            Payload::InitiateTest {
                contract: g.contract,
            },
            10,
        ),
    ];
    assert!(s.apply_all(&txs, 1, 1).iter().all(|r| r.is_success()));
    s
}

/// All pass/fail sequences of length 0..=MAX_EXECS.
fn sequences() -> Vec<Vec<bool>> {
    let mut out = vec![vec![]];
    for len in 1..=MAX_EXECS {
        for bits in 0..1u32 << len {
            out.push((0..len).map(|i| bits >> i & 1 == 1).collect());
        }
    }
    out
}

fn check_complete(g: &Gating, s: &WorldState, expect: bool) -> Result<(), String> {
    let mut s = s.clone();
    let r = s.apply(&g.complete, &Default::default());
    let t = &s.acceptance_tests[&g.contract];
    let settled = t.is_test_completed && t.escrow == 0 && s.balance(&g.developer.address()) == 110;
    match (r.is_success(), expect) {
        (true, true) if settled => Ok(()),
        (false, false) if r.revert_reason() == Some("results not verified") => Ok(()),
        _ => Err(format!(
            "complete: {:?}, truth table says {expect}",
            r.status
        )),
    }
}

fn gating_dfs(
    g: &Gating,
    seqs: &[Vec<bool>],
    s: &WorldState,
    case: usize,
    all_pass: bool,
    count: &mut usize,
) -> Result<(), String> {
    check_complete(g, s, all_pass).map_err(|e| format!("{case} cases: {e}"))?;
    *count += 1;
    if case == MAX_CASES {
        return Ok(());
    }
    for seq in seqs {
        let mut next = s.clone();
        let mut txs = vec![g.register[case].clone()];
        txs.extend(
            seq.iter()
                .enumerate()
                .map(|(slot, &p)| g.exec[case][slot][p as usize].clone()),
        );
        for r in next.apply_all(&txs, 2 + case as u64, 10) {
            if !r.is_success() {
                return Err(format!("setup tx reverted: {:?}", r.status));
            }
        }
        let passed = seq.iter().any(|&p| p);
        gating_dfs(g, seqs, &next, case + 1, all_pass && passed, count)?;
    }
    Ok(())
}

fn gating() -> Outcome {
    let g = gating_fixture();
    let seqs = sequences();
    let base = gating_base(&g);
    let mut count = 0;
    gating_dfs(&g, &seqs, &base, 0, true, &mut count)?;

    // Random interleavings across cases, each tester's own order kept.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..300 {
        let k = rng.gen_range(0..=MAX_CASES);
        let mut queues: Vec<Vec<Transaction>> = Vec::new();
        let mut truth = true;
        for case in 0..k {
            let seq = seqs.choose(&mut rng).unwrap();
            truth &= seq.iter().any(|&p| p);
            let mut q = vec![g.register[case].clone()];
            q.extend(
                seq.iter()
                    .enumerate()
                    .map(|(slot, &p)| g.exec[case][slot][p as usize].clone()),
            );
            queues.push(q);
        }
        let mut order = Vec::new();
        while queues.iter().any(|q| !q.is_empty()) {
            let live: Vec<usize> = (0..queues.len())
                .filter(|&i| !queues[i].is_empty())
                .collect();
            let i = *live.choose(&mut rng).unwrap();
            order.push(queues[i].remove(0));
        }
        let mut s = base.clone();
        s.apply_all(&order, 2, 10);
        check_complete(&g, &s, truth).map_err(|e| format!("interleaving {trial}: {e}"))?;
    }
    Ok(format!(
        "{count} exhaustive configurations and 300 interleavings match the truth table"
    ))
}

// ---------------------------------------------------------------------------
// 8. Harness.

fn sweep_base(seed: u64) -> SimScenario {
    SimScenario {
        seed,
        n_validators: 4,
        latency: Latency { min: 1, max: 5 },
        drop_probability: Probability::ZERO,
        partitions: vec![],
        crash_faults: vec![],
        workload: Workload::Generated {
            accounts: 6,
            engagements: 4,
            start_tick: 1,
            interval_ticks: 5,
            balance: 10_000,
            fee: 100,
        },
        max_ticks: 20_000,
        empty_block_interval: 50,
        timeout_ticks: None,
        max_block_txs: 256,
    }
}

fn schema_check(csv_text: &str, rows: usize) -> Result<Vec<csv::StringRecord>, String> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(String::from)
        .collect();
    ensure!(header == SWEEP_CSV_HEADER, "unexpected header {header:?}");
    let recs: Vec<csv::StringRecord> = r
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure!(recs.len() == rows, "{} rows, expected {rows}", recs.len());
    let col = |name: &str| SWEEP_CSV_HEADER.iter().position(|h| *h == name).unwrap();
    for rec in &recs {
        ensure!(
            rec.len() == SWEEP_CSV_HEADER.len(),
            "row width {}",
            rec.len()
        );
        ensure!(
            &rec[col("status")] == "ok",
            "row status {}",
            &rec[col("status")]
        );
        for name in [
            "seed",
            "end_tick",
            "submitted",
            "committed",
            "messages_sent",
            "state_bytes",
        ] {
            rec[col(name)]
                .parse::<u64>()
                .map_err(|_| format!("{name} is not an integer: {:?}", &rec[col(name)]))?;
        }
        for name in ["throughput", "block_interval_mean"] {
            rec[col(name)]
                .parse::<f64>()
                .map_err(|_| format!("{name} is not a number: {:?}", &rec[col(name)]))?;
        }
    }
    Ok(recs)
}

const FIXTURE_SEEDS: [u64; 3] = [11, 12, 13];

fn harness() -> Outcome {
    let started = Instant::now();
    let spec = SweepSpec {
        base: sweep_base(2026),
        axis: SweepAxis::NodeCount(vec![1, 4, 8, 16]),
        repetitions: 1,
        threads: None,
    };
    let rows = run_sweep(&spec).map_err(|e| e.to_string())?;
    let text = sweep_csv(&rows);
    schema_check(&text, 4)?;
    let node_sweep = started.elapsed();
    ensure!(
        node_sweep < Duration::from_secs(60),
        "node sweep took {node_sweep:?}"
    );

    let mut pairs = Vec::new();
    for seed in FIXTURE_SEEDS {
        let spec = SweepSpec {
            base: sweep_base(seed),
            axis: SweepAxis::DropProbability(vec![
                Probability::ZERO,
                Probability::new(1, 10).unwrap(),
                Probability::new(3, 10).unwrap(),
            ]),
            repetitions: 1,
            threads: None,
        };
        let rows = run_sweep(&spec).map_err(|e| e.to_string())?;
        schema_check(&sweep_csv(&rows), 3)?;
        let tp: Vec<f64> = rows
            .iter()
            .map(|r| r.report.as_ref().unwrap().throughput)
            .collect();
        ensure!(
            tp[0].total_cmp(&tp[2]).is_ge(),
            "seed {seed}: throughput {:.3} at drop 0 < {:.3} at drop 0.3",
            tp[0],
            tp[2]
        );
        pairs.push(format!("{:.1}>={:.1}", tp[0], tp[2]));
    }
    Ok(format!(
        "node sweep {{1,4,8,16}} in {} ms, CSV valid; drop 0 vs 0.3 throughput {}",
        node_sweep.as_millis(),
        pairs.join(", ")
    ))
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "contract conformance",
            Some(Duration::from_secs(1)),
            conformance,
        ),
        (
            "tamper evidence",
            Some(Duration::from_secs(10)),
            tamper_evidence,
        ),
        (
            "determinism and replay",
            Some(Duration::from_secs(30)),
            determinism,
        ),
        ("currency conservation", None, conservation),
        (
            "consensus safety and liveness",
            Some(Duration::from_secs(300)),
            consensus,
        ),
        ("workflow oracle equivalence", None, workflow_oracle),
        ("settlement gating", None, gating),
        ("harness sweeps", Some(Duration::from_secs(60)), harness),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:?}, limit {l:?}")),
            (r, _) => r,
        };
        match &result {
            Ok(detail) => println!(
                "[PASS] {} {name}: {detail} ({} ms)",
                i + 1,
                elapsed.as_millis()
            ),
            Err(why) => {
                println!(
                    "[FAIL] {} {name}: {why} ({} ms)",
                    i + 1,
                    elapsed.as_millis()
                );
                failed.push(i + 1);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 8 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
