//! Binary Merkle commitments over transaction hashes.
//!
//! Empty list commits to 32 zero bytes, a single leaf is its own root, and
//! a level with an odd node count duplicates its last node.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_concat, Digest};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("leaf index {index} out of range for {len} leaves")]
pub struct IndexOutOfRange {
    pub index: u64,
    pub len: usize,
}

/// Which side of the running hash a sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf_index: u64,
    pub siblings: Vec<(Digest, Side)>,
}

fn parent(left: &Digest, right: &Digest) -> Digest {
    hash_concat(&[&left.0, &right.0])
}

fn next_level(level: &[Digest]) -> Vec<Digest> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => parent(l, r),
            [l] => parent(l, l),
            _ => unreachable!(),
        })
        .collect()
}

pub fn merkle_root(leaves: &[Digest]) -> Digest {
    match leaves.len() {
        0 => Digest::ZERO,
        1 => leaves[0],
        _ => {
            let mut level = next_level(leaves);
            while level.len() > 1 {
                level = next_level(&level);
            }
            level[0]
        }
    }
}

pub fn merkle_proof(leaves: &[Digest], index: u64) -> Result<MerkleProof, IndexOutOfRange> {
    let len = leaves.len();
    let mut idx = usize::try_from(index)
        .ok()
        .filter(|i| *i < len)
        .ok_or(IndexOutOfRange { index, len })?;

    let mut siblings = Vec::new();
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        let sibling = if idx % 2 == 0 {
            (*level.get(idx + 1).unwrap_or(&level[idx]), Side::Right)
        } else {
            (level[idx - 1], Side::Left)
        };
        siblings.push(sibling);
        level = next_level(&level);
        idx /= 2;
    }
    Ok(MerkleProof {
        leaf_index: index,
        siblings,
    })
}

/// Replays `proof` from `leaf` and compares against `root`.
///
/// The side flags must agree with the bits of `leaf_index`, and the index
/// must fit in the proof depth, so a mutated index never verifies.
pub fn verify_merkle_proof(leaf: &Digest, proof: &MerkleProof, root: &Digest) -> bool {
    let depth = proof.siblings.len();
    if depth < 64 && proof.leaf_index >> depth != 0 {
        return false;
    }
    let mut acc = *leaf;
    for (level, (sibling, side)) in proof.siblings.iter().enumerate() {
        let bit = (proof.leaf_index >> level) & 1;
        acc = match (bit, side) {
            (0, Side::Right) => parent(&acc, sibling),
            (1, Side::Left) => parent(sibling, &acc),
            _ => return false,
        };
    }
    acc == *root
}
