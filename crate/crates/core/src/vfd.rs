//! Verifiable fair delivery: a sender streams provider-signed chunks and
//! the receiver acknowledges each valid one with a signed receipt. The
//! latest receipt is a publicly checkable delivery count.

use std::sync::Arc;

use crate::crypto::{hash_parts, Digest, PublicKey, SigKeyPair, Signature, SymKey};

/// Domain tags prefixed to every signed message.
pub mod tag {
    pub const CHUNK: u8 = 0x01;
    pub const MTREE: u8 = 0x02;
    pub const RECEIPT: u8 = 0x03;
    pub const KEY_REQUEST: u8 = 0x04;
    pub const KEY_REVEAL: u8 = 0x05;
}

/// Identifies a prepared content instance: `hash(root || contract || pk_P)`.
/// Chunk and Merkle-tree signatures bind to it, so they stay valid across
/// repeated sessions of one deployment.
pub fn content_id(root: &Digest, contract: &Digest, pk_p: &PublicKey) -> Digest {
    hash_parts(&[root.as_bytes(), contract.as_bytes(), pk_p.as_bytes()])
}

/// `hash(root || contract || pk_S || pk_R || nonce)` where `nonce` is the
/// session counter.
pub fn session_id(
    root: &Digest,
    contract: &Digest,
    pk_s: &PublicKey,
    pk_r: &PublicKey,
    nonce: u64,
) -> Digest {
    hash_parts(&[
        root.as_bytes(),
        contract.as_bytes(),
        pk_s.as_bytes(),
        pk_r.as_bytes(),
        &nonce.to_be_bytes(),
    ])
}

pub fn chunk_message(cid: &Digest, index: u64, ciphertext: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(41 + ciphertext.len());
    m.push(tag::CHUNK);
    m.extend_from_slice(cid.as_bytes());
    m.extend_from_slice(&index.to_be_bytes());
    m.extend_from_slice(ciphertext);
    m
}

pub fn receipt_message(sid: &Digest, index: u64, pk_r: &PublicKey, pk_s: &PublicKey) -> Vec<u8> {
    let mut m = Vec::with_capacity(41 + 66);
    m.push(tag::RECEIPT);
    m.extend_from_slice(sid.as_bytes());
    m.extend_from_slice(&index.to_be_bytes());
    m.extend_from_slice(pk_r.as_bytes());
    m.extend_from_slice(pk_s.as_bytes());
    m
}

/// Streaming key request: `tag || sid || i || pk_C`.
pub fn key_request_message(sid: &Digest, index: u64, pk_c: &PublicKey) -> Vec<u8> {
    let mut m = Vec::with_capacity(41 + 33);
    m.push(tag::KEY_REQUEST);
    m.extend_from_slice(sid.as_bytes());
    m.extend_from_slice(&index.to_be_bytes());
    m.extend_from_slice(pk_c.as_bytes());
    m
}

/// Streaming key reveal: `tag || sid || i || k_i`.
pub fn key_reveal_message(sid: &Digest, index: u64, key: &SymKey) -> Vec<u8> {
    let mut m = Vec::with_capacity(41 + 32);
    m.push(tag::KEY_REVEAL);
    m.extend_from_slice(sid.as_bytes());
    m.extend_from_slice(&index.to_be_bytes());
    m.extend_from_slice(key.as_bytes());
    m
}

/// Merkle-tree commitment message: `tag || cid || n || leaf digests`.
pub fn mtree_message(cid: &Digest, leaves: &[Digest]) -> Vec<u8> {
    let mut m = Vec::with_capacity(41 + 32 * leaves.len());
    m.push(tag::MTREE);
    m.extend_from_slice(cid.as_bytes());
    m.extend_from_slice(&(leaves.len() as u64).to_be_bytes());
    for l in leaves {
        m.extend_from_slice(l.as_bytes());
    }
    m
}

/// Ciphertext chunk with the provider's signature over `(index, c_i)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedChunk {
    pub index: u64,
    pub ciphertext: Vec<u8>,
    pub sig: Signature,
}

impl SignedChunk {
    pub fn sign(provider: &SigKeyPair, cid: &Digest, index: u64, ciphertext: Vec<u8>) -> Self {
        let sig = provider.sign(&chunk_message(cid, index, &ciphertext));
        SignedChunk { index, ciphertext, sig }
    }

    /// The external validation predicate: the provider signed this chunk at this index.
    pub fn is_valid(&self, pk_p: &PublicKey, cid: &Digest) -> bool {
        pk_p.verify(&chunk_message(cid, self.index, &self.ciphertext), &self.sig)
    }
}

/// Receiver-signed acknowledgment of chunk `index` in session `sid`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub sid: Digest,
    pub index: u64,
    pub sig: Signature,
}

impl Receipt {
    pub fn sign(receiver: &SigKeyPair, sid: Digest, index: u64, pk_s: &PublicKey) -> Self {
        let sig = receiver.sign(&receipt_message(&sid, index, &receiver.public(), pk_s));
        Receipt { sid, index, sig }
    }

    pub fn verify(&self, pk_r: &PublicKey, pk_s: &PublicKey) -> bool {
        pk_r.verify(&receipt_message(&self.sid, self.index, pk_r, pk_s), &self.sig)
    }
}

/// Delivery count certified by `proof`, or 0 when absent or forged.
pub fn verify_proof(proof: Option<&Receipt>, pk_r: &PublicKey, pk_s: &PublicKey) -> u64 {
    match proof {
        Some(r) if r.verify(pk_r, pk_s) => r.index,
        _ => 0,
    }
}

/// Deadline bookkeeping shared by both machines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Timer {
    duration: u64,
    deadline: Option<u64>,
}

impl Timer {
    fn new(duration: u64) -> Self {
        Timer { duration, deadline: None }
    }

    fn arm(&mut self, now: u64) {
        self.deadline = Some(now + self.duration);
    }

    fn expired(&self, now: u64) -> bool {
        self.deadline.is_some_and(|d| now >= d)
    }
}

#[derive(Clone, Debug)]
pub struct VfdSender {
    chunks: Arc<[SignedChunk]>,
    sid: Digest,
    pk_s: PublicKey,
    pk_r: PublicKey,
    /// Index of the last chunk sent (0 before activation).
    cursor: u64,
    proof: Option<Receipt>,
    timer: Timer,
    halted: bool,
}

impl VfdSender {
    pub fn new(
        chunks: Arc<[SignedChunk]>,
        sid: Digest,
        pk_s: PublicKey,
        pk_r: PublicKey,
        timer: u64,
    ) -> Self {
        VfdSender { chunks, sid, pk_s, pk_r, cursor: 0, proof: None, timer: Timer::new(timer), halted: false }
    }

    fn send_next(&mut self, now: u64) -> Option<SignedChunk> {
        let next = self.chunks.get(self.cursor as usize).cloned();
        match next {
            Some(c) => {
                self.cursor += 1;
                self.timer.arm(now);
                Some(c)
            }
            None => {
                self.halted = true;
                None
            }
        }
    }

    /// Emits `deliver(1)`, or halts immediately on empty input.
    pub fn activate(&mut self, now: u64) -> Option<SignedChunk> {
        if self.halted || self.cursor != 0 {
            return None;
        }
        self.send_next(now)
    }

    /// A receipt for the chunk just sent advances the stream; anything
    /// else halts the sender with its current proof.
    pub fn on_receipt(&mut self, now: u64, r: &Receipt) -> Option<SignedChunk> {
        if self.halted {
            return None;
        }
        if r.sid != self.sid || r.index != self.cursor || !r.verify(&self.pk_r, &self.pk_s) {
            self.halted = true;
            return None;
        }
        self.proof = Some(*r);
        self.send_next(now)
    }

    pub fn on_tick(&mut self, now: u64) {
        if !self.halted && self.timer.expired(now) {
            self.halted = true;
        }
    }

    /// Stops sending; the current proof stays available.
    pub fn halt(&mut self) {
        self.halted = true;
    }

    pub fn next_deadline(&self) -> Option<u64> {
        if self.halted {
            None
        } else {
            self.timer.deadline
        }
    }

    pub fn proof(&self) -> Option<&Receipt> {
        self.proof.as_ref()
    }

    /// Number of `deliver` messages emitted so far.
    pub fn sent(&self) -> u64 {
        self.cursor
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    pub fn n(&self) -> u64 {
        self.chunks.len() as u64
    }
}

#[derive(Clone, Debug)]
pub struct VfdReceiver {
    n: u64,
    pk_p: PublicKey,
    cid: Digest,
    sid: Digest,
    pk_s: PublicKey,
    keys: SigKeyPair,
    accepted: Vec<SignedChunk>,
    timer: Timer,
    halted: bool,
}

impl VfdReceiver {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: u64,
        pk_p: PublicKey,
        cid: Digest,
        sid: Digest,
        pk_s: PublicKey,
        keys: SigKeyPair,
        timer: u64,
    ) -> Self {
        VfdReceiver {
            n,
            pk_p,
            cid,
            sid,
            pk_s,
            keys,
            accepted: Vec::new(),
            timer: Timer::new(timer),
            halted: false,
        }
    }

    pub fn activate(&mut self, now: u64) {
        if self.n == 0 {
            self.halted = true;
        } else {
            self.timer.arm(now);
        }
    }

    /// Expected next index (1-based).
    pub fn expected(&self) -> u64 {
        self.accepted.len() as u64 + 1
    }

    /// Accepts `deliver(j)` only at the expected index with a valid
    /// provider signature; any other message halts the receiver.
    pub fn on_deliver(&mut self, now: u64, chunk: &SignedChunk) -> Option<Receipt> {
        if self.halted {
            return None;
        }
        if chunk.index != self.expected() || !chunk.is_valid(&self.pk_p, &self.cid) {
            self.halted = true;
            return None;
        }
        self.accepted.push(chunk.clone());
        let receipt = Receipt::sign(&self.keys, self.sid, chunk.index, &self.pk_s);
        if self.accepted.len() as u64 == self.n {
            self.halted = true;
        } else {
            self.timer.arm(now);
        }
        Some(receipt)
    }

    pub fn on_tick(&mut self, now: u64) {
        if !self.halted && self.timer.expired(now) {
            self.halted = true;
        }
    }

    pub fn next_deadline(&self) -> Option<u64> {
        if self.halted {
            None
        } else {
            self.timer.deadline
        }
    }

    pub fn accepted(&self) -> &[SignedChunk] {
        &self.accepted
    }

    pub fn into_accepted(self) -> Vec<SignedChunk> {
        self.accepted
    }

    pub fn complete(&self) -> bool {
        self.accepted.len() as u64 == self.n
    }

    pub fn halted(&self) -> bool {
        self.halted
    }
}
