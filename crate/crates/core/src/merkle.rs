//! Binary Merkle commitment over content chunks.
//!
//! Leaves are `hash(chunk)` and internal nodes `hash(left || right)` with no
//! domain tags. Leaf indices are 1-based at the API surface.

use thiserror::Error;

use crate::crypto::{hash, hash_parts, Digest, DIGEST_LEN};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MerkleError {
    #[error("leaf count {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("leaf index {index} outside 1..={n}")]
    IndexOutOfRange { index: u64, n: usize },
    #[error("malformed merkle proof encoding")]
    Malformed,
}

/// Which side the sibling sits on relative to the running hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleTree {
    /// `levels[0]` are the leaves, the last level is the root alone.
    levels: Vec<Vec<Digest>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleProof {
    pub index: u64,
    pub path: Vec<(Side, Digest)>,
}

impl MerkleTree {
    pub fn build<C: AsRef<[u8]> + Sync>(chunks: &[C]) -> Result<Self, MerkleError> {
        let leaves = par::map(chunks, |c| hash(c.as_ref()));
        Self::from_leaves(leaves)
    }

    /// Rebuilds the internal levels from leaf digests alone.
    pub fn from_leaves(leaves: Vec<Digest>) -> Result<Self, MerkleError> {
        let n = leaves.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(MerkleError::NotPowerOfTwo(n));
        }
        let mut levels = vec![leaves];
        while levels.last().map_or(0, Vec::len) > 1 {
            let below = levels.last().expect("non-empty");
            let next = below.chunks_exact(2).map(|p| hash_parts(&[&p[0].0, &p[1].0])).collect();
            levels.push(next);
        }
        Ok(MerkleTree { levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("at least one level")[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.levels[0]
    }

    /// Leaf digest at 1-based `index`.
    pub fn leaf(&self, index: u64) -> Option<Digest> {
        let i = usize::try_from(index).ok()?.checked_sub(1)?;
        self.levels[0].get(i).copied()
    }

    pub fn gen_proof(&self, index: u64) -> Result<MerkleProof, MerkleError> {
        let n = self.leaf_count();
        if index == 0 || index > n as u64 {
            return Err(MerkleError::IndexOutOfRange { index, n });
        }
        let mut pos = (index - 1) as usize;
        let mut path = Vec::with_capacity(self.levels.len() - 1);
        for level in &self.levels[..self.levels.len() - 1] {
            let (side, sib) = if pos.is_multiple_of(2) { (Side::Right, pos + 1) } else { (Side::Left, pos - 1) };
            path.push((side, level[sib]));
            pos /= 2;
        }
        Ok(MerkleProof { index, path })
    }
}

impl MerkleProof {
    /// index (8 BE) || path length (1) || (side byte, digest)*
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.index.to_be_bytes());
        out.push(self.path.len() as u8);
        for (side, d) in &self.path {
            out.push(match side {
                Side::Left => 0,
                Side::Right => 1,
            });
            out.extend_from_slice(&d.0);
        }
        out
    }

    pub fn encoded_len(&self) -> usize {
        Self::encoded_len_for_depth(self.path.len())
    }

    pub fn encoded_len_for_depth(depth: usize) -> usize {
        9 + depth * (1 + DIGEST_LEN)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MerkleError> {
        if bytes.len() < 9 {
            return Err(MerkleError::Malformed);
        }
        let index = u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"));
        let depth = bytes[8] as usize;
        let body = &bytes[9..];
        if body.len() != depth * (1 + DIGEST_LEN) {
            return Err(MerkleError::Malformed);
        }
        let mut path = Vec::with_capacity(depth);
        for step in body.chunks_exact(1 + DIGEST_LEN) {
            let side = match step[0] {
                0 => Side::Left,
                1 => Side::Right,
                _ => return Err(MerkleError::Malformed),
            };
            let mut d = [0u8; DIGEST_LEN];
            d.copy_from_slice(&step[1..]);
            path.push((side, Digest(d)));
        }
        Ok(MerkleProof { index, path })
    }
}

/// Folds `leaf` up the sibling path. The side bits must agree with the
/// binary expansion of `index - 1`, which binds the proof to its position.
pub fn verify_mtp(root: &Digest, index: u64, proof: &MerkleProof, leaf: &Digest) -> bool {
    if index == 0 || proof.index != index || proof.path.len() >= 64 {
        return false;
    }
    let mut pos = index - 1;
    if pos >> proof.path.len() != 0 {
        return false;
    }
    let mut acc = *leaf;
    for (side, sib) in &proof.path {
        let expected = if pos & 1 == 0 { Side::Right } else { Side::Left };
        if *side != expected {
            return false;
        }
        acc = match side {
            Side::Right => hash_parts(&[&acc.0, &sib.0]),
            Side::Left => hash_parts(&[&sib.0, &acc.0]),
        };
        pos >>= 1;
    }
    acc == *root
}
