//! Hashing, addresses and Ed25519 keys.
//!
//! Every fixed-width byte value (digests, addresses, keys, signatures) is a
//! newtype that renders as lowercase hex in JSON and `Debug` output.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Error returned when parsing a hex-encoded fixed-width value.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HexError {
    #[error("invalid hex: {0}")]
    Invalid(String),
    #[error("expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("bytes are not a valid public key")]
    BadKey,
}

macro_rules! hex_bytes {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, HexError> {
                let s = s.strip_prefix("0x").unwrap_or(s);
                let raw = hex::decode(s).map_err(|e| HexError::Invalid(e.to_string()))?;
                Self::from_slice(&raw)
            }

            pub fn from_slice(raw: &[u8]) -> Result<Self, HexError> {
                let arr: [u8; $len] = raw.try_into().map_err(|_| HexError::Length {
                    expected: $len,
                    actual: raw.len(),
                })?;
                Ok(Self(arr))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl std::str::FromStr for $name {
            type Err = HexError;

            fn from_str(s: &str) -> Result<Self, HexError> {
                Self::from_hex(s)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_bytes!(
    /// A 256-bit SHA-256 digest.
    Digest,
    32
);
hex_bytes!(
    /// Account identifier: the first 20 bytes of `hash256(public key)`.
    Address,
    20
);
hex_bytes!(
    /// Detached Ed25519 signature.
    Signature,
    64
);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    /// First eight bytes read as a big-endian integer.
    pub fn prefix_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().expect("8 bytes"))
    }
}

impl Default for Digest {
    fn default() -> Self {
        Digest::ZERO
    }
}

/// SHA-256 of `bytes`.
pub fn hash256(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_concat(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

impl Address {
    pub fn from_public_key(pk: &PublicKey) -> Address {
        let h = hash256(pk.as_bytes());
        let mut out = [0u8; 20];
        out.copy_from_slice(&h.0[..20]);
        Address(out)
    }
}

/// Ed25519 verifying key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        self.0.as_bytes()
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, HexError> {
        let arr: [u8; 32] = raw.try_into().map_err(|_| HexError::Length {
            expected: 32,
            actual: raw.len(),
        })?;
        VerifyingKey::from_bytes(&arr)
            .map(PublicKey)
            .map_err(|_| HexError::BadKey)
    }

    pub fn from_hex(s: &str) -> Result<Self, HexError> {
        let raw = hex::decode(s.strip_prefix("0x").unwrap_or(s))
            .map_err(|e| HexError::Invalid(e.to_string()))?;
        Self::from_bytes(&raw)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.as_bytes())
    }

    pub fn address(&self) -> Address {
        Address::from_public_key(self)
    }

    /// Strict Ed25519 verification (rejects non-canonical encodings).
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
        self.0.verify_strict(msg, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// An Ed25519 signing key together with its derived address.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
    address: Address,
}

impl Keypair {
    pub fn from_seed(seed: [u8; 32]) -> Keypair {
        let signing = SigningKey::from_bytes(&seed);
        let address = Address::from_public_key(&PublicKey(signing.verifying_key()));
        Keypair { signing, address }
    }

    pub fn generate<R: RngCore>(rng: &mut R) -> Keypair {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Keypair::from_seed(seed)
    }

    /// Deterministic key derived from a domain label and an integer pair.
    pub fn derive(label: &str, seed: u64, index: u64) -> Keypair {
        let d = hash_concat(&[label.as_bytes(), &seed.to_be_bytes(), &index.to_be_bytes()]);
        Keypair::from_seed(d.0)
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key())
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

/// On-disk key file: `{address, public_key, secret_key}` as hex.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyFile {
    pub address: Address,
    pub public_key: PublicKey,
    pub secret_key: String,
}

#[derive(Debug, Error)]
pub enum KeyFileError {
    #[error(transparent)]
    Hex(#[from] HexError),
    #[error("key file address {stated} does not match derived address {derived}")]
    AddressMismatch { stated: Address, derived: Address },
    #[error("key file public key does not match secret key")]
    PublicKeyMismatch,
}

impl KeyFile {
    pub fn from_keypair(kp: &Keypair) -> KeyFile {
        KeyFile {
            address: kp.address(),
            public_key: kp.public_key(),
            secret_key: hex::encode(kp.secret_bytes()),
        }
    }

    pub fn to_keypair(&self) -> Result<Keypair, KeyFileError> {
        let raw = Digest::from_hex(&self.secret_key)?;
        let kp = Keypair::from_seed(raw.0);
        if kp.public_key() != self.public_key {
            return Err(KeyFileError::PublicKeyMismatch);
        }
        if kp.address() != self.address {
            return Err(KeyFileError::AddressMismatch {
                stated: self.address,
                derived: kp.address(),
            });
        }
        Ok(kp)
    }
}

/// Address → public key lookup used to authenticate transaction senders.
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    keys: BTreeMap<Address, PublicKey>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, pk: PublicKey) -> Address {
        let addr = pk.address();
        self.keys.insert(addr, pk);
        addr
    }

    pub fn get(&self, addr: &Address) -> Option<&PublicKey> {
        self.keys.get(addr)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl FromIterator<PublicKey> for KeyRegistry {
    fn from_iter<I: IntoIterator<Item = PublicKey>>(iter: I) -> Self {
        let mut reg = KeyRegistry::new();
        for pk in iter {
            reg.insert(pk);
        }
        reg
    }
}
