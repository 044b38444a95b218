//! Hashing, signatures, the hash-stream chunk cipher and verifiable ElGamal.
//!
//! Build constants: keccak256 for every hash, ECDSA over secp256k1 for
//! signatures, and the NIST P-384 group for verifiable decryption. The
//! P-384 base field is wide enough to carry a 32-byte key plus a counter
//! byte in a single x-coordinate.

mod sig;
mod vpke;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha3::{Digest as _, Keccak256};
use thiserror::Error;

pub use sig::{PublicKey, SigKeyPair, Signature, PUBLIC_KEY_LEN, SIGNATURE_LEN};
pub use vpke::{
    decode_from_group, encode_to_group, prove_pke, vdec, venc, verify_pke, GroupElement, Scalar,
    VpkeCiphertext, VpkeKeyPair, VpkeProof, GROUP_ELEMENT_LEN, SCALAR_LEN,
};

/// Identifier of the hash function, recorded in reports.
pub const HASH_ID: &str = "keccak256";
/// Identifier of the signature scheme, recorded in reports.
pub const SIGNATURE_ID: &str = "ecdsa-secp256k1";
/// Identifier of the verifiable-encryption group, recorded in reports.
pub const GROUP_ID: &str = "p384";

/// Width of digests and symmetric keys in bytes.
pub const DIGEST_LEN: usize = 32;
/// Cipher block width.
pub const BLOCK_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("chunk length {0} is not a positive multiple of {BLOCK_LEN} bytes")]
    MalformedChunk(usize),
    #[error("no curve point found for the value after 256 counter values")]
    EncodeFailure,
    #[error("group element does not carry an encoded 32-byte value")]
    DecodeFailure,
    #[error("encryption randomness must be non-zero")]
    ZeroRandomness,
    #[error("malformed {0} encoding")]
    Malformed(&'static str),
}

/// A 256-bit keccak digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; DIGEST_LEN] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

/// Symmetric chunk key; also the value type of every key-tree node.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SymKey(pub [u8; DIGEST_LEN]);

impl SymKey {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn random<R: rand::RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut k = [0u8; DIGEST_LEN];
        rng.fill_bytes(&mut k);
        SymKey(k)
    }
}

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymKey({}..)", hex::encode(&self.0[..4]))
    }
}

impl From<Digest> for SymKey {
    fn from(d: Digest) -> Self {
        SymKey(d.0)
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Keccak256::digest(data).into())
}

/// Hash of the concatenation of `parts`, without materializing it.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Keccak256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Keystream block `j` (1-based) for `key`: `hash(key || j)` with `j` as 8-byte BE.
fn keystream_block(key: &SymKey, j: u64) -> Digest {
    hash_parts(&[key.as_bytes(), &j.to_be_bytes()])
}

/// XORs block `j` of `chunk` with `hash(key || j)`. Encryption and
/// decryption are the same map.
pub fn sym_encrypt(key: &SymKey, chunk: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if chunk.is_empty() || !chunk.len().is_multiple_of(BLOCK_LEN) {
        return Err(CryptoError::MalformedChunk(chunk.len()));
    }
    let mut out = Vec::with_capacity(chunk.len());
    for (j, block) in chunk.chunks_exact(BLOCK_LEN).enumerate() {
        let pad = keystream_block(key, j as u64 + 1);
        out.extend(block.iter().zip(pad.0.iter()).map(|(a, b)| a ^ b));
    }
    Ok(out)
}

pub fn sym_decrypt(key: &SymKey, chunk: &[u8]) -> Result<Vec<u8>, CryptoError> {
    sym_encrypt(key, chunk)
}
