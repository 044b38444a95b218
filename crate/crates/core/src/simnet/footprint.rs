//! Closed-form sizes of contract calls under the canonical codec.
//!
//! Every call carries a one-byte kind tag. The only size that depends on
//! `n` in a dispute-free session is the reveal set, at most `log2 n`
//! elements; a complaint adds one chunk plus a Merkle path.

use crate::arbiter::Mode;
use crate::crypto::{DIGEST_LEN, GROUP_ELEMENT_LEN, PUBLIC_KEY_LEN, SIGNATURE_LEN};
use crate::crypto::VpkeProof;
use crate::keytree::EncryptedKey;

const TAG: u64 = 1;
const U64: u64 = 8;
const PK: u64 = PUBLIC_KEY_LEN as u64;
const SIG: u64 = SIGNATURE_LEN as u64;
const DIGEST: u64 = DIGEST_LEN as u64;

pub const RECEIPT: u64 = DIGEST + U64 + SIG;

pub fn start() -> u64 {
    TAG + PK + DIGEST + 2 * U64 + 3 * U64
}

pub fn join() -> u64 {
    TAG + PK
}

/// Calls without a payload: prepared, delivered, wrong_rk, received, reset, withdraw.
pub fn bare() -> u64 {
    TAG
}

pub fn consume(mode: Mode) -> u64 {
    match mode {
        Mode::Download => TAG + PK + 1 + GROUP_ELEMENT_LEN as u64,
        Mode::Stream => TAG + PK + 1,
    }
}

pub fn vfd_proof(with_receipt: bool) -> u64 {
    TAG + 1 + if with_receipt { RECEIPT } else { 0 }
}

pub fn reveal_keys(elements: u64) -> u64 {
    TAG + 1 + elements * EncryptedKey::LEN as u64
}

pub fn claim() -> u64 {
    TAG + RECEIPT
}

fn signed_chunk(eta: u64) -> u64 {
    U64 + 4 + eta + SIG
}

fn merkle_proof(n: u64) -> u64 {
    U64 + 1 + u64::from(n.trailing_zeros()) * (1 + DIGEST)
}

pub fn pom_download(n: u64, eta: u64, erk_elements: u64) -> u64 {
    TAG + 2 * U64
        + signed_chunk(eta)
        + DIGEST
        + merkle_proof(n)
        + GROUP_ELEMENT_LEN as u64
        + (1 + erk_elements * EncryptedKey::LEN as u64)
        + VpkeProof::LEN as u64
}

pub fn pom_stream(n: u64, eta: u64) -> u64 {
    TAG + U64 + signed_chunk(eta) + DIGEST + SIG + DIGEST + merkle_proof(n)
}

/// Bytes of a dispute-free session: consume, delivered, proof, reveal set
/// for download; consume, received and both claims for streaming.
pub fn honest_session(mode: Mode, erk_elements: u64) -> u64 {
    match mode {
        Mode::Download => consume(mode) + bare() + vfd_proof(true) + reveal_keys(erk_elements),
        Mode::Stream => consume(mode) + bare() + 2 * claim(),
    }
}

/// Setup calls start, join, prepared.
pub fn setup() -> u64 {
    start() + join() + bare()
}
