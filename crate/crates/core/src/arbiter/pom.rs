//! Proofs of misbehavior and their on-chain validation.

use thiserror::Error;

use crate::crypto::{
    decode_from_group, hash, sym_decrypt, verify_pke, Digest, GroupElement, PublicKey, Signature,
    SymKey, VpkeProof,
};
use crate::keytree::{recover_from_node, EncryptedRevealSet};
use crate::merkle::{verify_mtp, MerkleProof};
use crate::vfd::{key_reveal_message, SignedChunk};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PomError {
    #[error("chunk index {0} outside the paid range")]
    IndexOutOfRange(u64),
    #[error("submitted reveal set does not match the stored digest")]
    RevealSetMismatch,
    #[error("reveal element {0} does not exist")]
    ElementOutOfRange(u64),
    #[error("verifiable decryption proof rejected")]
    BadDecryptionProof,
    #[error("chunk signature rejected")]
    BadChunkSignature,
    #[error("key signature rejected")]
    BadKeySignature,
    #[error("merkle proof rejected")]
    BadMerkleProof,
    #[error("chunk {i} is not derivable from reveal element {j}")]
    KeyNotDerivable { i: u64, j: u64 },
    #[error("chunk decrypts to the committed content")]
    ChunkMatches,
}

/// Download-mode complaint: chunk `i` decrypts (under the key derived from
/// reveal element `j`) to something other than leaf `i` of the commitment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PomDownload {
    pub i: u64,
    pub j: u64,
    pub chunk: SignedChunk,
    pub leaf: Digest,
    pub mtp: MerkleProof,
    /// Decryption of `erk[j]`, proven by `proof`.
    pub rk_element: GroupElement,
    pub erk: EncryptedRevealSet,
    pub proof: VpkeProof,
}

/// Values the download contract holds when judging a complaint.
#[derive(Clone, Copy, Debug)]
pub struct DownloadContext<'a> {
    pub n: u64,
    pub ctr: u64,
    pub root: &'a Digest,
    pub erk_hash: &'a Digest,
    pub pk_p: &'a PublicKey,
    pub vpk_c: &'a GroupElement,
    pub cid: &'a Digest,
}

/// Accepts when every piece of evidence checks out and the decrypted
/// chunk disagrees with the commitment. A proven plaintext that does not
/// decode to a key at all is also the provider's fault and is accepted.
pub fn validate_pom_download(pom: &PomDownload, ctx: &DownloadContext<'_>) -> Result<(), PomError> {
    let i = pom.i;
    if i == 0 || i > ctx.ctr || i > ctx.n || pom.chunk.index != i {
        return Err(PomError::IndexOutOfRange(i));
    }
    if pom.erk.digest() != *ctx.erk_hash {
        return Err(PomError::RevealSetMismatch);
    }
    let elem = usize::try_from(pom.j)
        .ok()
        .and_then(|j| pom.erk.elements.get(j))
        .ok_or(PomError::ElementOutOfRange(pom.j))?;
    if !verify_pke(ctx.vpk_c, &elem.ciphertext, &pom.rk_element, &pom.proof) {
        return Err(PomError::BadDecryptionProof);
    }
    if !pom.chunk.is_valid(ctx.pk_p, ctx.cid) {
        return Err(PomError::BadChunkSignature);
    }
    if !verify_mtp(ctx.root, i, &pom.mtp, &pom.leaf) {
        return Err(PomError::BadMerkleProof);
    }
    // Position check first, with a placeholder value: it only depends on
    // the tree shape.
    if recover_from_node(i, ctx.n, elem.position, SymKey::default()).is_none() {
        return Err(PomError::KeyNotDerivable { i, j: pom.j });
    }
    let Ok(raw) = decode_from_group(&pom.rk_element) else {
        return Ok(());
    };
    let key = recover_from_node(i, ctx.n, elem.position, SymKey(raw))
        .ok_or(PomError::KeyNotDerivable { i, j: pom.j })?;
    match sym_decrypt(&key, &pom.chunk.ciphertext) {
        Ok(m) if hash(&m) == pom.leaf => Err(PomError::ChunkMatches),
        _ => Ok(()),
    }
}

/// Streaming complaint: the provider-signed key for chunk `i` does not
/// decrypt the provider-signed chunk to leaf `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PomStream {
    pub i: u64,
    pub chunk: SignedChunk,
    pub key: SymKey,
    pub key_sig: Signature,
    pub leaf: Digest,
    pub mtp: MerkleProof,
}

#[derive(Clone, Copy, Debug)]
pub struct StreamContext<'a> {
    pub n: u64,
    pub root: &'a Digest,
    pub pk_p: &'a PublicKey,
    pub cid: &'a Digest,
    /// Provider-consumer session id the key signature binds to.
    pub sid: &'a Digest,
}

pub fn validate_pom_stream(pom: &PomStream, ctx: &StreamContext<'_>) -> Result<(), PomError> {
    let i = pom.i;
    if i == 0 || i > ctx.n || pom.chunk.index != i {
        return Err(PomError::IndexOutOfRange(i));
    }
    if !pom.chunk.is_valid(ctx.pk_p, ctx.cid) {
        return Err(PomError::BadChunkSignature);
    }
    if !ctx.pk_p.verify(&key_reveal_message(ctx.sid, i, &pom.key), &pom.key_sig) {
        return Err(PomError::BadKeySignature);
    }
    if !verify_mtp(ctx.root, i, &pom.mtp, &pom.leaf) {
        return Err(PomError::BadMerkleProof);
    }
    match sym_decrypt(&pom.key, &pom.chunk.ciphertext) {
        Ok(m) if hash(&m) == pom.leaf => Err(PomError::ChunkMatches),
        _ => Ok(()),
    }
}
