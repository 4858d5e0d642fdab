//! Test-case repository, execution log with automatic verdicts, feedback,
//! compensation statements and per-case audit trails.

mod artifacts;
mod export;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Encoder;
use crate::crypto::{hash_concat, Address, Digest};
use crate::tx::{CaseId, ContractId, ExecId, FeedbackId};
use crate::vm::{reasons, CallContext, EventStamp, Revert, StateKey, WorldState};

pub use artifacts::{ArtifactError, ArtifactStore};
pub use export::{audit_trail_csv, compensation_csv};

/// Size cap for descriptions and feedback bodies.
pub const MAX_TEXT_BYTES: usize = 4 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub case_id: CaseId,
    pub acceptance_contract: ContractId,
    pub author: Address,
    #[serde(with = "lossy_text")]
    pub description: Vec<u8>,
    pub input_digest: Digest,
    pub expected_output_digest: Digest,
    pub registered: EventStamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub exec_id: ExecId,
    pub case_id: CaseId,
    pub tester: Address,
    pub actual_output_digest: Digest,
    pub verdict: Verdict,
    pub tick: u64,
    pub block_height: u64,
    pub stamp: EventStamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Subject {
    Case(CaseId),
    Execution(ExecId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub feedback_id: FeedbackId,
    pub subject: Subject,
    pub author: Address,
    #[serde(with = "lossy_text")]
    pub body: Vec<u8>,
    pub tick: u64,
    pub stamp: EventStamp,
}

mod lossy_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

impl TestCase {
    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.fixed(&self.case_id.0)
            .fixed(&self.acceptance_contract.0)
            .fixed(&self.author.0)
            .bytes(&self.description)
            .fixed(&self.input_digest.0)
            .fixed(&self.expected_output_digest.0);
        self.registered.encode(e);
    }
}

impl ExecutionRecord {
    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.fixed(&self.exec_id.0)
            .fixed(&self.case_id.0)
            .fixed(&self.tester.0)
            .fixed(&self.actual_output_digest.0)
            .u8(match self.verdict {
                Verdict::Pass => 1,
                Verdict::Fail => 0,
            })
            .u64(self.tick)
            .u64(self.block_height);
        self.stamp.encode(e);
    }
}

impl Feedback {
    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.fixed(&self.feedback_id.0);
        match self.subject {
            Subject::Case(id) => e.u8(0).fixed(&id.0),
            Subject::Execution(id) => e.u8(1).fixed(&id.0),
        };
        e.fixed(&self.author.0).bytes(&self.body).u64(self.tick);
        self.stamp.encode(e);
    }
}

/// Append-only on-chain test records. Only the VM writes here.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TestRegistry {
    pub cases: BTreeMap<CaseId, TestCase>,
    pub executions: BTreeMap<ExecId, ExecutionRecord>,
    pub feedback: BTreeMap<FeedbackId, Feedback>,
}

impl TestRegistry {
    /// Executions of `case_id` in chain order.
    pub fn executions_of(&self, case_id: &CaseId) -> Vec<&ExecutionRecord> {
        let mut v: Vec<_> = self
            .executions
            .values()
            .filter(|e| e.case_id == *case_id)
            .collect();
        v.sort_by_key(|e| e.stamp.position());
        v
    }
}

impl WorldState {
    pub(crate) fn register_test_case(
        &mut self,
        call: &CallContext,
        contract: &ContractId,
        description: &[u8],
        input_digest: &Digest,
        expected_output_digest: &Digest,
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<CaseId, Revert> {
        if description.len() > MAX_TEXT_BYTES {
            return Err(Revert(reasons::PAYLOAD_TOO_LARGE));
        }
        let test = self
            .acceptance_tests
            .get(contract)
            .ok_or(Revert(reasons::UNKNOWN_CONTRACT))?;
        if test.is_test_completed {
            return Err(Revert(reasons::ALREADY_COMPLETED));
        }
        let case_id = hash_concat(&[
            &call.sender.0,
            &call.nonce.to_be_bytes(),
            &expected_output_digest.0,
        ]);
        self.registry.cases.insert(
            case_id,
            TestCase {
                case_id,
                acceptance_contract: *contract,
                author: call.sender,
                description: description.to_vec(),
                input_digest: *input_digest,
                expected_output_digest: *expected_output_digest,
                registered: call.stamp,
            },
        );
        touched.insert(StateKey::TestCase(case_id));
        Ok(case_id)
    }

    /// The verdict is recomputed here; submitters only supply the digest.
    pub(crate) fn record_execution(
        &mut self,
        call: &CallContext,
        case_id: &CaseId,
        actual_output_digest: &Digest,
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<(ExecId, Verdict), Revert> {
        let case = self
            .registry
            .cases
            .get(case_id)
            .ok_or(Revert(reasons::UNKNOWN_TEST_CASE))?;
        let verdict = if case.expected_output_digest == *actual_output_digest {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        let exec_id = hash_concat(&[&call.sender.0, &call.nonce.to_be_bytes(), &case_id.0]);
        self.registry.executions.insert(
            exec_id,
            ExecutionRecord {
                exec_id,
                case_id: *case_id,
                tester: call.sender,
                actual_output_digest: *actual_output_digest,
                verdict,
                tick: call.stamp.tick,
                block_height: call.stamp.block_height,
                stamp: call.stamp,
            },
        );
        touched.insert(StateKey::Execution(exec_id));
        Ok((exec_id, verdict))
    }

    pub(crate) fn post_feedback(
        &mut self,
        call: &CallContext,
        subject: &Digest,
        body: &[u8],
        touched: &mut BTreeSet<StateKey>,
    ) -> Result<FeedbackId, Revert> {
        if body.len() > MAX_TEXT_BYTES {
            return Err(Revert(reasons::PAYLOAD_TOO_LARGE));
        }
        let subject = if self.registry.cases.contains_key(subject) {
            Subject::Case(*subject)
        } else if self.registry.executions.contains_key(subject) {
            Subject::Execution(*subject)
        } else {
            return Err(Revert(reasons::UNKNOWN_SUBJECT));
        };
        let subject_id = match subject {
            Subject::Case(id) | Subject::Execution(id) => id,
        };
        let feedback_id = hash_concat(&[&call.sender.0, &call.nonce.to_be_bytes(), &subject_id.0]);
        self.registry.feedback.insert(
            feedback_id,
            Feedback {
                feedback_id,
                subject,
                author: call.sender,
                body: body.to_vec(),
                tick: call.stamp.tick,
                stamp: call.stamp,
            },
        );
        touched.insert(StateKey::Feedback(feedback_id));
        Ok(feedback_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkflowError {
    #[error("window beyond head")]
    WindowBeyondHead,
    #[error("window start {from} is after end {to}")]
    InvertedWindow { from: u64, to: u64 },
    #[error("arithmetic overflow")]
    Overflow,
    #[error("unknown test case {0}")]
    UnknownCase(CaseId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompensationQuery {
    pub tester: Address,
    pub from_height: u64,
    pub to_height: u64,
    pub base_rate: u64,
    pub bonus_rate: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompensationStatement {
    pub tester: Address,
    /// Inclusive height window.
    pub window: (u64, u64),
    pub executed: u64,
    pub matched: u64,
    pub amount: u64,
    pub contribution_ppm: u64,
}

/// `amount = base_rate × executed + bonus_rate × matched` over the
/// tester's executions with `from_height ≤ block_height ≤ to_height`;
/// `contribution_ppm = ⌊10⁶ × executed / all executions in window⌋`.
pub fn compute_compensation(
    state: &WorldState,
    head: u64,
    q: &CompensationQuery,
) -> Result<CompensationStatement, WorkflowError> {
    if q.from_height > q.to_height {
        return Err(WorkflowError::InvertedWindow {
            from: q.from_height,
            to: q.to_height,
        });
    }
    if q.to_height > head {
        return Err(WorkflowError::WindowBeyondHead);
    }
    let (mut executed, mut matched, mut total) = (0u64, 0u64, 0u64);
    for rec in state.registry.executions.values() {
        if rec.block_height < q.from_height || rec.block_height > q.to_height {
            continue;
        }
        total += 1;
        if rec.tester == q.tester {
            executed += 1;
            if rec.verdict == Verdict::Pass {
                matched += 1;
            }
        }
    }
    let amount = q
        .base_rate
        .checked_mul(executed)
        .and_then(|base| {
            q.bonus_rate
                .checked_mul(matched)
                .and_then(|bonus| base.checked_add(bonus))
        })
        .ok_or(WorkflowError::Overflow)?;
    let contribution_ppm = if total == 0 {
        0
    } else {
        (1_000_000u128 * executed as u128 / total as u128) as u64
    };
    Ok(CompensationStatement {
        tester: q.tester,
        window: (q.from_height, q.to_height),
        executed,
        matched,
        amount,
        contribution_ppm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditEventKind {
    Registration,
    Execution,
    Feedback,
    Settlement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub kind: AuditEventKind,
    pub tick: u64,
    pub block_height: u64,
    pub tx_index: u32,
    pub actor: Address,
    pub tx_hash: Digest,
    /// Execution verdict, for execution entries.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verdict: Option<Verdict>,
}

impl AuditEntry {
    fn from_stamp(kind: AuditEventKind, s: &EventStamp, verdict: Option<Verdict>) -> Self {
        AuditEntry {
            kind,
            tick: s.tick,
            block_height: s.block_height,
            tx_index: s.tx_index,
            actor: s.actor,
            tx_hash: s.tx_hash,
            verdict,
        }
    }
}

/// Chronological history of a test case: registration, executions,
/// feedback on the case or its executions, and settlement of its contract.
pub fn audit_trail(state: &WorldState, case_id: &CaseId) -> Result<Vec<AuditEntry>, WorkflowError> {
    let case = state
        .registry
        .cases
        .get(case_id)
        .ok_or(WorkflowError::UnknownCase(*case_id))?;
    let mut entries = vec![AuditEntry::from_stamp(
        AuditEventKind::Registration,
        &case.registered,
        None,
    )];
    let mut exec_ids = BTreeSet::new();
    for rec in state.registry.executions_of(case_id) {
        exec_ids.insert(rec.exec_id);
        entries.push(AuditEntry::from_stamp(
            AuditEventKind::Execution,
            &rec.stamp,
            Some(rec.verdict),
        ));
    }
    for fb in state.registry.feedback.values() {
        let relevant = match fb.subject {
            Subject::Case(id) => id == *case_id,
            Subject::Execution(id) => exec_ids.contains(&id),
        };
        if relevant {
            entries.push(AuditEntry::from_stamp(
                AuditEventKind::Feedback,
                &fb.stamp,
                None,
            ));
        }
    }
    if let Some(settlement) = state
        .acceptance_tests
        .get(&case.acceptance_contract)
        .and_then(|t| t.settlement.as_ref())
    {
        entries.push(AuditEntry::from_stamp(
            AuditEventKind::Settlement,
            settlement,
            None,
        ));
    }
    entries.sort_by_key(|e| (e.block_height, e.tx_index));
    Ok(entries)
}
