//! Transactions and their contract-call payloads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::{hash256, Address, Digest, KeyRegistry, Keypair, Signature};

pub type ContractId = Digest;
pub type CaseId = Digest;
pub type ExecId = Digest;
pub type FeedbackId = Digest;

/// Stable one-byte payload tags.
pub mod tags {
    pub const DEPLOY_CUSTOMER_AGREEMENT: u8 = 0x01;
    pub const SET_TESTING_FEE: u8 = 0x02;
    pub const DEPLOY_DEVELOPER_AGREEMENT: u8 = 0x03;
    pub const SET_REWARD: u8 = 0x04;
    pub const DEPLOY_ACCEPTANCE_TEST: u8 = 0x05;
    pub const INITIATE_TEST: u8 = 0x06;
    pub const COMPLETE_TEST: u8 = 0x07;
    pub const REGISTER_TEST_CASE: u8 = 0x10;
    pub const RECORD_EXECUTION: u8 = 0x11;
    pub const POST_FEEDBACK: u8 = 0x12;

    /// Tags this build understands; 0x13 and 0x14 are reserved.
    pub fn is_known(tag: u8) -> bool {
        matches!(tag, 0x01..=0x07 | 0x10..=0x12)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    DeployCustomerAgreement,
    SetTestingFee {
        contract: ContractId,
        fee: u64,
    },
    DeployDeveloperAgreement,
    SetReward {
        contract: ContractId,
        amount: u64,
    },
    DeployAcceptanceTest {
        customer: Address,
        developer: Address,
        fee: u64,
    },
    InitiateTest {
        contract: ContractId,
    },
    CompleteTest {
        contract: ContractId,
    },
    RegisterTestCase {
        contract: ContractId,
        #[serde(with = "utf8_bytes")]
        description: Vec<u8>,
        input_digest: Digest,
        expected_output_digest: Digest,
    },
    RecordExecution {
        case_id: CaseId,
        actual_output_digest: Digest,
    },
    PostFeedback {
        /// A case id or an execution id.
        subject: Digest,
        #[serde(with = "utf8_bytes")]
        body: Vec<u8>,
    },
    /// A payload whose tag this build does not know. `tag` must not be one
    /// of the known tags, otherwise encodings would collide.
    Unknown {
        tag: u8,
        #[serde(with = "hex_vec")]
        body: Vec<u8>,
    },
}

mod utf8_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl Payload {
    pub fn tag(&self) -> u8 {
        use tags::*;
        match self {
            Payload::DeployCustomerAgreement => DEPLOY_CUSTOMER_AGREEMENT,
            Payload::SetTestingFee { .. } => SET_TESTING_FEE,
            Payload::DeployDeveloperAgreement => DEPLOY_DEVELOPER_AGREEMENT,
            Payload::SetReward { .. } => SET_REWARD,
            Payload::DeployAcceptanceTest { .. } => DEPLOY_ACCEPTANCE_TEST,
            Payload::InitiateTest { .. } => INITIATE_TEST,
            Payload::CompleteTest { .. } => COMPLETE_TEST,
            Payload::RegisterTestCase { .. } => REGISTER_TEST_CASE,
            Payload::RecordExecution { .. } => RECORD_EXECUTION,
            Payload::PostFeedback { .. } => POST_FEEDBACK,
            Payload::Unknown { tag, .. } => *tag,
        }
    }

    fn encode_body(&self, e: &mut Encoder) {
        match self {
            Payload::DeployCustomerAgreement | Payload::DeployDeveloperAgreement => {}
            Payload::SetTestingFee { contract, fee } => {
                e.fixed(&contract.0).u64(*fee);
            }
            Payload::SetReward { contract, amount } => {
                e.fixed(&contract.0).u64(*amount);
            }
            Payload::DeployAcceptanceTest {
                customer,
                developer,
                fee,
            } => {
                e.fixed(&customer.0).fixed(&developer.0).u64(*fee);
            }
            Payload::InitiateTest { contract } | Payload::CompleteTest { contract } => {
                e.fixed(&contract.0);
            }
            Payload::RegisterTestCase {
                contract,
                description,
                input_digest,
                expected_output_digest,
            } => {
                e.fixed(&contract.0)
                    .bytes(description)
                    .fixed(&input_digest.0)
                    .fixed(&expected_output_digest.0);
            }
            Payload::RecordExecution {
                case_id,
                actual_output_digest,
            } => {
                e.fixed(&case_id.0).fixed(&actual_output_digest.0);
            }
            Payload::PostFeedback { subject, body } => {
                e.fixed(&subject.0).bytes(body);
            }
            Payload::Unknown { body, .. } => {
                e.fixed(body);
            }
        }
    }

    /// `tag ‖ u32 body length ‖ body`.
    pub fn encode(&self, e: &mut Encoder) {
        let mut body = Encoder::new();
        self.encode_body(&mut body);
        e.u8(self.tag()).bytes(&body.finish());
    }

    pub fn encoded_len(&self) -> usize {
        let mut e = Encoder::new();
        self.encode(&mut e);
        e.len()
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Payload, DecodeError> {
        let tag = d.u8()?;
        let start = d.position();
        let body = d.bytes()?;
        if !tags::is_known(tag) {
            return Ok(Payload::Unknown {
                tag,
                body: body.to_vec(),
            });
        }
        let mut b = Decoder::new(body);
        let digest = |b: &mut Decoder<'_>| b.fixed::<32>().map(Digest);
        let address = |b: &mut Decoder<'_>| b.fixed::<20>().map(Address);
        let payload = match tag {
            tags::DEPLOY_CUSTOMER_AGREEMENT => Payload::DeployCustomerAgreement,
            tags::SET_TESTING_FEE => Payload::SetTestingFee {
                contract: digest(&mut b)?,
                fee: b.u64()?,
            },
            tags::DEPLOY_DEVELOPER_AGREEMENT => Payload::DeployDeveloperAgreement,
            tags::SET_REWARD => Payload::SetReward {
                contract: digest(&mut b)?,
                amount: b.u64()?,
            },
            tags::DEPLOY_ACCEPTANCE_TEST => Payload::DeployAcceptanceTest {
                customer: address(&mut b)?,
                developer: address(&mut b)?,
                fee: b.u64()?,
            },
            tags::INITIATE_TEST => Payload::InitiateTest {
                contract: digest(&mut b)?,
            },
            tags::COMPLETE_TEST => Payload::CompleteTest {
                contract: digest(&mut b)?,
            },
            tags::REGISTER_TEST_CASE => Payload::RegisterTestCase {
                contract: digest(&mut b)?,
                description: b.bytes()?.to_vec(),
                input_digest: digest(&mut b)?,
                expected_output_digest: digest(&mut b)?,
            },
            tags::RECORD_EXECUTION => Payload::RecordExecution {
                case_id: digest(&mut b)?,
                actual_output_digest: digest(&mut b)?,
            },
            tags::POST_FEEDBACK => Payload::PostFeedback {
                subject: digest(&mut b)?,
                body: b.bytes()?.to_vec(),
            },
            _ => unreachable!("is_known covers every tag"),
        };
        b.finish().map_err(|_| DecodeError::Malformed {
            what: "payload body",
            offset: start,
        })?;
        Ok(payload)
    }
}

/// The signed fields of a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsignedTransaction {
    pub sender: Address,
    pub nonce: u64,
    pub payload: Payload,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: Address,
    pub nonce: u64,
    pub payload: Payload,
    pub value: u64,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignError {
    #[error("signing key address {key} does not match sender {sender}")]
    KeyMismatch { sender: Address, key: Address },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown identity {0}")]
pub struct UnknownIdentity(pub Address);

fn encode_unsigned(e: &mut Encoder, sender: &Address, nonce: u64, payload: &Payload, value: u64) {
    e.fixed(&sender.0).u64(nonce);
    payload.encode(e);
    e.u64(value);
}

impl UnsignedTransaction {
    pub fn new(sender: Address, nonce: u64, payload: Payload, value: u64) -> Self {
        UnsignedTransaction {
            sender,
            nonce,
            payload,
            value,
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(64);
        encode_unsigned(&mut e, &self.sender, self.nonce, &self.payload, self.value);
        e.finish()
    }

    pub fn sign(self, key: &Keypair) -> Result<Transaction, SignError> {
        sign_transaction(self, key)
    }
}

pub fn sign_transaction(tx: UnsignedTransaction, key: &Keypair) -> Result<Transaction, SignError> {
    if key.address() != tx.sender {
        return Err(SignError::KeyMismatch {
            sender: tx.sender,
            key: key.address(),
        });
    }
    let signature = key.sign(&tx.canonical_bytes());
    Ok(Transaction {
        sender: tx.sender,
        nonce: tx.nonce,
        payload: tx.payload,
        value: tx.value,
        signature,
    })
}

/// `Ok(true)` iff the signature is valid for the sender's registered key.
pub fn verify_transaction(
    tx: &Transaction,
    registry: &KeyRegistry,
) -> Result<bool, UnknownIdentity> {
    let pk = registry.get(&tx.sender).ok_or(UnknownIdentity(tx.sender))?;
    Ok(pk.verify(&tx.signing_bytes(), &tx.signature))
}

impl Transaction {
    pub fn unsigned(&self) -> UnsignedTransaction {
        UnsignedTransaction {
            sender: self.sender,
            nonce: self.nonce,
            payload: self.payload.clone(),
            value: self.value,
        }
    }

    /// Canonical encoding of the unsigned fields (the signed message).
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(64);
        encode_unsigned(&mut e, &self.sender, self.nonce, &self.payload, self.value);
        e.finish()
    }

    pub fn encode(&self, e: &mut Encoder) {
        encode_unsigned(e, &self.sender, self.nonce, &self.payload, self.value);
        e.fixed(&self.signature.0);
    }

    /// Full canonical encoding: unsigned fields followed by the signature.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(128);
        self.encode(&mut e);
        e.finish()
    }

    /// Leaf hash used for Merkle commitment and receipts.
    pub fn hash(&self) -> Digest {
        hash256(&self.canonical_bytes())
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Transaction, DecodeError> {
        Ok(Transaction {
            sender: Address(d.fixed()?),
            nonce: d.u64()?,
            payload: Payload::decode(d)?,
            value: d.u64()?,
            signature: Signature(d.fixed()?),
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Transaction, DecodeError> {
        let mut d = Decoder::new(bytes);
        let tx = Transaction::decode(&mut d)?;
        d.finish()?;
        Ok(tx)
    }

    pub fn verify(&self, registry: &KeyRegistry) -> Result<bool, UnknownIdentity> {
        verify_transaction(self, registry)
    }
}
