use std::fmt;

use k256::ecdsa::signature::{Signer, Verifier};
use k256::ecdsa::{self, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};

use super::CryptoError;

/// Compressed SEC1 public key length.
pub const PUBLIC_KEY_LEN: usize = 33;
/// Fixed-width `r || s` signature length.
pub const SIGNATURE_LEN: usize = 64;

/// Compressed secp256k1 verification key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    /// Returns `false` on any malformed key or signature; verification is deterministic.
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        let Ok(vk) = VerifyingKey::from_sec1_bytes(&self.0) else {
            return false;
        };
        let Ok(sig) = ecdsa::Signature::from_slice(&sig.0) else {
            return false;
        };
        vk.verify(msg, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0[..6]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..6]))
    }
}

impl Signature {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SIGNATURE_LEN] =
            bytes.try_into().map_err(|_| CryptoError::Malformed("signature"))?;
        Ok(Signature(arr))
    }
}

/// ECDSA signing key together with its compressed public key.
#[derive(Clone)]
pub struct SigKeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl SigKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let signing = SigningKey::random(rng);
        let public = public_of(&signing);
        SigKeyPair { signing, public }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    /// RFC 6979 deterministic, low-S normalized.
    pub fn sign(&self, msg: &[u8]) -> Signature {
        let sig: ecdsa::Signature = self.signing.sign(msg);
        let bytes = sig.to_bytes();
        let mut out = [0u8; SIGNATURE_LEN];
        out.copy_from_slice(&bytes);
        Signature(out)
    }
}

impl fmt::Debug for SigKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigKeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

fn public_of(sk: &SigningKey) -> PublicKey {
    let point = sk.verifying_key().to_encoded_point(true);
    let mut out = [0u8; PUBLIC_KEY_LEN];
    out.copy_from_slice(point.as_bytes());
    PublicKey(out)
}
