//! Hash-derived key tree over the chunk keys.
//!
//! A tree for `n` chunks (a power of two) has `2n - 1` heap-indexed nodes:
//! node 0 is `hash(mk)`, children of node `i` are `hash(KT[i] || 0x00)` and
//! `hash(KT[i] || 0x01)`, and chunk `i` (1-based) is keyed by node
//! `n - 2 + i`. Revealing a prefix of chunk keys only needs the roots of the
//! maximal subtrees covering that prefix, at most `log2 n` nodes.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::crypto::{
    self, decode_from_group, encode_to_group, hash, hash_parts, venc, CryptoError, Digest,
    Scalar, SymKey, VpkeCiphertext, VpkeKeyPair, GroupElement,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyTreeError {
    #[error("chunk count {0} is not a power of two")]
    NotPowerOfTwo(u64),
    #[error("reveal count {ctr} outside 1..={n}")]
    CounterOutOfRange { ctr: u64, n: u64 },
    #[error("reveal set does not exactly cover the first {ctr} of {n} chunks")]
    InvalidCover { n: u64, ctr: u64 },
    #[error("malformed reveal-set encoding")]
    Malformed,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyTree {
    nodes: Vec<SymKey>,
    n: u64,
}

fn check_pow2(n: u64) -> Result<(), KeyTreeError> {
    if n == 0 || !n.is_power_of_two() {
        return Err(KeyTreeError::NotPowerOfTwo(n));
    }
    Ok(())
}

fn child(parent: &SymKey, bit: u8) -> SymKey {
    hash_parts(&[parent.as_bytes(), &[bit]]).into()
}

/// Depth of heap node `i` (root is depth 0).
fn node_depth(i: u64) -> u32 {
    63 - (i + 1).leading_zeros()
}

/// KT-index range `[first, last]` of the leaves under node `pos`, or
/// `None` when `pos` is not a node of an `n`-leaf tree.
pub fn subtree_leaves(n: u64, pos: u64) -> Option<(u64, u64)> {
    if n == 0 || !n.is_power_of_two() || pos >= 2 * n - 1 {
        return None;
    }
    let height = n.trailing_zeros() - node_depth(pos);
    let (mut l, mut r) = (pos, pos);
    for _ in 0..height {
        l = 2 * l + 1;
        r = 2 * r + 2;
    }
    Some((l, r))
}

impl KeyTree {
    /// Derives the full tree from a master key.
    pub fn generate(n: u64, mk: &SymKey) -> Result<Self, KeyTreeError> {
        Self::from_root(n, hash(mk.as_bytes()).into())
    }

    /// Expands a tree whose root node is `root` itself (not its hash); used
    /// to regenerate a revealed subtree.
    pub fn from_root(n: u64, root: SymKey) -> Result<Self, KeyTreeError> {
        check_pow2(n)?;
        let size = (2 * n - 1) as usize;
        let mut nodes = Vec::with_capacity(size);
        nodes.push(root);
        for i in 0..(n as usize - 1) {
            let parent = nodes[i];
            nodes.push(child(&parent, 0));
            nodes.push(child(&parent, 1));
        }
        Ok(KeyTree { nodes, n })
    }

    pub fn nodes(&self) -> &[SymKey] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> u64 {
        self.n
    }

    /// Key of chunk `i` (1-based).
    pub fn chunk_key(&self, i: u64) -> Option<SymKey> {
        if i == 0 || i > self.n {
            return None;
        }
        self.nodes.get((self.n - 2 + i) as usize).copied()
    }

    pub fn leaves(&self) -> &[SymKey] {
        &self.nodes[(self.n - 1) as usize..]
    }

    /// Minimal cover of the first `ctr` chunk keys, merged bottom-up.
    pub fn reveal(&self, ctr: u64) -> Result<RevealSet, KeyTreeError> {
        let n = self.n;
        if ctr == 0 || ctr > n {
            return Err(KeyTreeError::CounterOutOfRange { ctr, n });
        }
        if ctr == 1 {
            return Ok(RevealSet {
                elements: vec![RevealedKey { position: n - 1, value: self.nodes[(n - 1) as usize] }],
            });
        }
        let mut ind: Vec<u64> = (0..ctr).map(|i| n - 1 + i).collect();
        loop {
            let mut t = Vec::with_capacity(ind.len());
            for pair in ind.chunks_exact(2) {
                // Siblings share a parent: (left-1)/2 == (right-2)/2.
                let p_l = (pair[0] - 1) / 2;
                let p_r = pair[1].checked_sub(2).map(|v| v / 2);
                if Some(p_l) == p_r {
                    t.push(p_l);
                } else {
                    t.extend_from_slice(pair);
                }
            }
            if ind.len() % 2 == 1 {
                t.push(ind[ind.len() - 1]);
            }
            if t.len() == ind.len() {
                break;
            }
            ind = t;
        }
        Ok(RevealSet {
            elements: ind
                .into_iter()
                .map(|p| RevealedKey { position: p, value: self.nodes[p as usize] })
                .collect(),
        })
    }
}

/// One revealed key-tree node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RevealedKey {
    pub position: u64,
    pub value: SymKey,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct RevealSet {
    pub elements: Vec<RevealedKey>,
}

impl RevealSet {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn positions(&self) -> Vec<u64> {
        self.elements.iter().map(|e| e.position).collect()
    }

    /// count (1) || (position 8 BE, value 32)*
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.elements.len() * 40);
        out.push(self.elements.len() as u8);
        for e in &self.elements {
            out.extend_from_slice(&e.position.to_be_bytes());
            out.extend_from_slice(e.value.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KeyTreeError> {
        let (&count, body) = bytes.split_first().ok_or(KeyTreeError::Malformed)?;
        if body.len() != count as usize * 40 {
            return Err(KeyTreeError::Malformed);
        }
        let elements = body
            .chunks_exact(40)
            .map(|c| RevealedKey {
                position: u64::from_be_bytes(c[..8].try_into().expect("8 bytes")),
                value: SymKey(c[8..].try_into().expect("32 bytes")),
            })
            .collect();
        Ok(RevealSet { elements })
    }

    /// Encrypts each value element-wise; positions stay in the clear.
    pub fn encrypt<R: RngCore + CryptoRng>(
        &self,
        vpk: &GroupElement,
        rng: &mut R,
    ) -> Result<EncryptedRevealSet, KeyTreeError> {
        let elements = self
            .elements
            .iter()
            .map(|e| {
                let m = encode_to_group(e.value.as_bytes())?;
                let ct = venc(vpk, &m, &Scalar::random_nonzero(rng))?;
                Ok(EncryptedKey { position: e.position, ciphertext: ct })
            })
            .collect::<Result<_, KeyTreeError>>()?;
        Ok(EncryptedRevealSet { elements })
    }
}

/// Generates the tree for `mk` and returns the minimal cover of the first `ctr` keys.
pub fn reveal_keys(n: u64, ctr: u64, mk: &SymKey) -> Result<RevealSet, KeyTreeError> {
    KeyTree::generate(n, mk)?.reveal(ctr)
}

/// True iff the subtrees rooted at `positions` partition exactly the
/// leaves of chunks `1..=ctr`.
pub fn validate_rkeys(n: u64, ctr: u64, positions: &[u64]) -> bool {
    if n == 0 || !n.is_power_of_two() || ctr > n {
        return false;
    }
    if ctr == n && positions == [0] {
        return true;
    }
    let mut ranges = Vec::with_capacity(positions.len());
    for &p in positions {
        match subtree_leaves(n, p) {
            Some(r) => ranges.push(r),
            None => return false,
        }
    }
    ranges.sort_unstable();
    let mut next = n - 1;
    for (l, r) in ranges {
        if l != next {
            return false;
        }
        next = r + 1;
    }
    next == n - 1 + ctr
}

/// Regenerates the first `ctr` chunk keys from a validated cover.
pub fn recover_keys(n: u64, ctr: u64, rk: &RevealSet) -> Result<Vec<SymKey>, KeyTreeError> {
    if !validate_rkeys(n, ctr, &rk.positions()) {
        return Err(KeyTreeError::InvalidCover { n, ctr });
    }
    let mut elems = rk.elements.clone();
    elems.sort_by_key(|e| subtree_leaves(n, e.position).map(|r| r.0));
    let mut keys = Vec::with_capacity(ctr as usize);
    for e in elems {
        let sub_n = 1u64 << (n.trailing_zeros() - node_depth(e.position));
        let sub = KeyTree::from_root(sub_n, e.value)?;
        keys.extend_from_slice(sub.leaves());
    }
    Ok(keys)
}

/// Derives the key of chunk `i` from `rk[j]` by walking the path from the
/// revealed node down to the leaf. `None` when the leaf is not under `rk[j]`.
pub fn recover_chunk_key(i: u64, j: usize, n: u64, rk: &RevealSet) -> Option<SymKey> {
    let e = rk.elements.get(j)?;
    recover_from_node(i, n, e.position, e.value)
}

pub(crate) fn recover_from_node(i: u64, n: u64, x: u64, y: SymKey) -> Option<SymKey> {
    if n == 0 || !n.is_power_of_two() || i == 0 || i > n {
        return None;
    }
    let mut ind = n + i - 2;
    if ind < x {
        return None;
    }
    let mut path = Vec::new();
    while ind > x {
        path.push(if ind % 2 == 1 { 0u8 } else { 1u8 });
        ind = (ind - 1) / 2;
    }
    if ind != x {
        return None;
    }
    let mut k = y;
    for bit in path.into_iter().rev() {
        k = child(&k, bit);
    }
    Some(k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncryptedKey {
    pub position: u64,
    pub ciphertext: VpkeCiphertext,
}

impl EncryptedKey {
    pub const LEN: usize = 8 + VpkeCiphertext::LEN;
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct EncryptedRevealSet {
    pub elements: Vec<EncryptedKey>,
}

impl EncryptedRevealSet {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn positions(&self) -> Vec<u64> {
        self.elements.iter().map(|e| e.position).collect()
    }

    pub fn encoded_len(&self) -> usize {
        1 + self.elements.len() * EncryptedKey::LEN
    }

    /// count (1) || (position 8 BE, c1 || c2)*
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.elements.len() as u8);
        for e in &self.elements {
            out.extend_from_slice(&e.position.to_be_bytes());
            out.extend_from_slice(&e.ciphertext.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KeyTreeError> {
        let (&count, body) = bytes.split_first().ok_or(KeyTreeError::Malformed)?;
        if body.len() != count as usize * EncryptedKey::LEN {
            return Err(KeyTreeError::Malformed);
        }
        let elements = body
            .chunks_exact(EncryptedKey::LEN)
            .map(|c| {
                Ok(EncryptedKey {
                    position: u64::from_be_bytes(c[..8].try_into().expect("8 bytes")),
                    ciphertext: VpkeCiphertext::from_bytes(&c[8..])?,
                })
            })
            .collect::<Result<_, KeyTreeError>>()?;
        Ok(EncryptedRevealSet { elements })
    }

    /// The value the arbiter stores on-chain.
    pub fn digest(&self) -> Digest {
        crypto::hash(&self.to_bytes())
    }

    pub fn decrypt(&self, key: &VpkeKeyPair) -> Result<RevealSet, KeyTreeError> {
        let elements = self
            .elements
            .iter()
            .map(|e| {
                let m = crypto::vdec(key.secret(), &e.ciphertext);
                Ok(RevealedKey { position: e.position, value: SymKey(decode_from_group(&m)?) })
            })
            .collect::<Result<_, KeyTreeError>>()?;
        Ok(RevealSet { elements })
    }
}
