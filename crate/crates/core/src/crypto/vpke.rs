//! ElGamal over P-384 with a Fiat-Shamir Schnorr proof of correct decryption.

use std::fmt;

use p384::elliptic_curve::ff::{Field, PrimeField};
use p384::elliptic_curve::group::Group;
use p384::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use p384::{AffinePoint, EncodedPoint, FieldBytes, ProjectivePoint};
use rand::{CryptoRng, RngCore};

use super::{hash_parts, CryptoError, DIGEST_LEN};

/// Compressed point length; the identity is encoded as all zeros.
pub const GROUP_ELEMENT_LEN: usize = 49;
pub const SCALAR_LEN: usize = 48;

const X_LEN: usize = 48;
/// Leading zero bytes in an encoded x-coordinate, before the value and counter.
const X_PAD: usize = X_LEN - DIGEST_LEN - 1;

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct GroupElement(ProjectivePoint);

impl GroupElement {
    pub fn generator() -> Self {
        GroupElement(ProjectivePoint::GENERATOR)
    }

    pub fn identity() -> Self {
        GroupElement(ProjectivePoint::IDENTITY)
    }

    pub fn mul(&self, s: &Scalar) -> Self {
        GroupElement(self.0 * s.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        GroupElement(self.0 + other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        GroupElement(self.0 - other.0)
    }

    pub fn to_bytes(&self) -> [u8; GROUP_ELEMENT_LEN] {
        let mut out = [0u8; GROUP_ELEMENT_LEN];
        if bool::from(self.0.is_identity()) {
            return out;
        }
        out.copy_from_slice(self.0.to_affine().to_encoded_point(true).as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != GROUP_ELEMENT_LEN {
            return Err(CryptoError::Malformed("group element"));
        }
        if bytes.iter().all(|b| *b == 0) {
            return Ok(Self::identity());
        }
        let ep = EncodedPoint::from_bytes(bytes).map_err(|_| CryptoError::Malformed("group element"))?;
        Option::<AffinePoint>::from(AffinePoint::from_encoded_point(&ep))
            .map(|a| GroupElement(a.into()))
            .ok_or(CryptoError::Malformed("group element"))
    }

    fn x_coordinate(&self) -> Option<[u8; X_LEN]> {
        if bool::from(self.0.is_identity()) {
            return None;
        }
        let enc = self.0.to_affine().to_encoded_point(true);
        let mut x = [0u8; X_LEN];
        x.copy_from_slice(&enc.x()?[..]);
        Some(x)
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({}..)", hex::encode(&self.to_bytes()[..8]))
    }
}

/// Element of Z_q for the P-384 group order q.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Scalar(p384::Scalar);

impl Scalar {
    pub fn zero() -> Self {
        Scalar(p384::Scalar::ZERO)
    }

    pub fn from_u64(v: u64) -> Self {
        Scalar(p384::Scalar::from(v))
    }

    /// Uniform non-zero scalar.
    pub fn random_nonzero<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let s = p384::Scalar::random(&mut *rng);
            if !bool::from(s.is_zero()) {
                return Scalar(s);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        bool::from(self.0.is_zero())
    }

    pub fn add(&self, other: &Self) -> Self {
        Scalar(self.0 + other.0)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Scalar(self.0 * other.0)
    }

    pub fn to_bytes(&self) -> [u8; SCALAR_LEN] {
        let mut out = [0u8; SCALAR_LEN];
        out.copy_from_slice(&self.0.to_repr());
        out
    }

    /// Rejects non-canonical encodings (values ≥ q).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != SCALAR_LEN {
            return Err(CryptoError::Malformed("scalar"));
        }
        let mut repr = FieldBytes::default();
        repr.copy_from_slice(bytes);
        Option::<p384::Scalar>::from(p384::Scalar::from_repr(repr))
            .map(Scalar)
            .ok_or(CryptoError::Malformed("scalar"))
    }

    /// A 256-bit digest is always below q, so the embedding is exact.
    fn from_digest(d: &[u8; DIGEST_LEN]) -> Self {
        let mut wide = [0u8; SCALAR_LEN];
        wide[SCALAR_LEN - DIGEST_LEN..].copy_from_slice(d);
        Self::from_bytes(&wide).expect("256-bit value is below the group order")
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({}..)", hex::encode(&self.to_bytes()[..8]))
    }
}

#[derive(Clone)]
pub struct VpkeKeyPair {
    secret: Scalar,
    public: GroupElement,
}

impl VpkeKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::from_secret(Scalar::random_nonzero(rng)).expect("non-zero secret")
    }

    pub fn from_secret(secret: Scalar) -> Result<Self, CryptoError> {
        if secret.is_zero() {
            return Err(CryptoError::Malformed("secret key"));
        }
        Ok(VpkeKeyPair { secret, public: GroupElement::generator().mul(&secret) })
    }

    pub fn public(&self) -> GroupElement {
        self.public
    }

    pub fn secret(&self) -> &Scalar {
        &self.secret
    }
}

impl fmt::Debug for VpkeKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VpkeKeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VpkeCiphertext {
    pub c1: GroupElement,
    pub c2: GroupElement,
}

impl VpkeCiphertext {
    pub const LEN: usize = 2 * GROUP_ELEMENT_LEN;

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..GROUP_ELEMENT_LEN].copy_from_slice(&self.c1.to_bytes());
        out[GROUP_ELEMENT_LEN..].copy_from_slice(&self.c2.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != Self::LEN {
            return Err(CryptoError::Malformed("ciphertext"));
        }
        Ok(VpkeCiphertext {
            c1: GroupElement::from_bytes(&bytes[..GROUP_ELEMENT_LEN])?,
            c2: GroupElement::from_bytes(&bytes[GROUP_ELEMENT_LEN..])?,
        })
    }
}

/// Proof `(A, B, Z)` that `m = c2 / c1^k` for the key behind `h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VpkeProof {
    pub a: GroupElement,
    pub b: GroupElement,
    pub z: Scalar,
}

impl VpkeProof {
    pub const LEN: usize = 2 * GROUP_ELEMENT_LEN + SCALAR_LEN;

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..GROUP_ELEMENT_LEN].copy_from_slice(&self.a.to_bytes());
        out[GROUP_ELEMENT_LEN..2 * GROUP_ELEMENT_LEN].copy_from_slice(&self.b.to_bytes());
        out[2 * GROUP_ELEMENT_LEN..].copy_from_slice(&self.z.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != Self::LEN {
            return Err(CryptoError::Malformed("proof"));
        }
        Ok(VpkeProof {
            a: GroupElement::from_bytes(&bytes[..GROUP_ELEMENT_LEN])?,
            b: GroupElement::from_bytes(&bytes[GROUP_ELEMENT_LEN..2 * GROUP_ELEMENT_LEN])?,
            z: Scalar::from_bytes(&bytes[2 * GROUP_ELEMENT_LEN..])?,
        })
    }
}

/// Try-and-increment embedding: x = 0^15 || m || counter, first counter
/// in 0..=255 whose x lies on the curve wins (even-y point).
pub fn encode_to_group(m: &[u8; DIGEST_LEN]) -> Result<GroupElement, CryptoError> {
    let mut enc = [0u8; 1 + X_LEN];
    enc[0] = 0x02;
    enc[1 + X_PAD..1 + X_PAD + DIGEST_LEN].copy_from_slice(m);
    for counter in 0..=u8::MAX {
        enc[X_LEN] = counter;
        let Ok(ep) = EncodedPoint::from_bytes(enc) else {
            continue;
        };
        if let Some(p) = Option::<AffinePoint>::from(AffinePoint::from_encoded_point(&ep)) {
            return Ok(GroupElement(p.into()));
        }
    }
    Err(CryptoError::EncodeFailure)
}

/// Inverse of [`encode_to_group`]: strips the padding and counter byte.
pub fn decode_from_group(p: &GroupElement) -> Result<[u8; DIGEST_LEN], CryptoError> {
    let x = p.x_coordinate().ok_or(CryptoError::DecodeFailure)?;
    if x[..X_PAD].iter().any(|b| *b != 0) {
        return Err(CryptoError::DecodeFailure);
    }
    let mut m = [0u8; DIGEST_LEN];
    m.copy_from_slice(&x[X_PAD..X_PAD + DIGEST_LEN]);
    // Only the first on-curve counter is ever produced, so a point reached
    // with a later counter is not an encoding of `m`.
    if encode_to_group(&m)? != *p {
        return Err(CryptoError::DecodeFailure);
    }
    Ok(m)
}

pub fn venc(h: &GroupElement, m: &GroupElement, r: &Scalar) -> Result<VpkeCiphertext, CryptoError> {
    if r.is_zero() {
        return Err(CryptoError::ZeroRandomness);
    }
    Ok(VpkeCiphertext { c1: GroupElement::generator().mul(r), c2: m.add(&h.mul(r)) })
}

pub fn vdec(k: &Scalar, ct: &VpkeCiphertext) -> GroupElement {
    ct.c2.sub(&ct.c1.mul(k))
}

fn challenge(
    a: &GroupElement,
    b: &GroupElement,
    h: &GroupElement,
    ct: &VpkeCiphertext,
    m: &GroupElement,
) -> Scalar {
    let d = hash_parts(&[
        &GroupElement::generator().to_bytes(),
        &a.to_bytes(),
        &b.to_bytes(),
        &h.to_bytes(),
        &ct.c1.to_bytes(),
        &ct.c2.to_bytes(),
        &m.to_bytes(),
    ]);
    Scalar::from_digest(&d.0)
}

/// Decrypts `ct` and proves the decryption: `A = g^x`, `B = c1^x`,
/// `Z = x + k*C` with `C` the Fiat-Shamir challenge.
pub fn prove_pke<R: RngCore + CryptoRng>(
    key: &VpkeKeyPair,
    ct: &VpkeCiphertext,
    rng: &mut R,
) -> (GroupElement, VpkeProof) {
    let m = vdec(&key.secret, ct);
    let x = Scalar::random_nonzero(rng);
    let a = GroupElement::generator().mul(&x);
    let b = ct.c1.mul(&x);
    let c = challenge(&a, &b, &key.public, ct, &m);
    let z = x.add(&key.secret.mul(&c));
    (m, VpkeProof { a, b, z })
}

/// Accepts iff `g^Z = A·h^C` and `m^C·c1^Z = B·c2^C`.
pub fn verify_pke(h: &GroupElement, ct: &VpkeCiphertext, m: &GroupElement, proof: &VpkeProof) -> bool {
    let c = challenge(&proof.a, &proof.b, h, ct, m);
    let g = GroupElement::generator();
    let lhs1 = g.mul(&proof.z);
    let rhs1 = proof.a.add(&h.mul(&c));
    let lhs2 = m.mul(&c).add(&ct.c1.mul(&proof.z));
    let rhs2 = proof.b.add(&ct.c2.mul(&c));
    lhs1 == rhs1 && lhs2 == rhs2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn secret_one_gives_generator() {
        let kp = VpkeKeyPair::from_secret(Scalar::from_u64(1)).unwrap();
        assert_eq!(kp.public(), GroupElement::generator());
        assert!(VpkeKeyPair::from_secret(Scalar::zero()).is_err());
    }

    #[test]
    fn distinct_randomness_distinct_keys() {
        let mut r = rng(1);
        let a = VpkeKeyPair::generate(&mut r);
        let b = VpkeKeyPair::generate(&mut r);
        assert_ne!(a.public(), b.public());
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut r = rng(2);
        let mut seen = Vec::new();
        for _ in 0..100 {
            let m: [u8; 32] = r.gen();
            let p = encode_to_group(&m).unwrap();
            // on-curve: survives a compressed round trip
            assert_eq!(GroupElement::from_bytes(&p.to_bytes()).unwrap(), p);
            assert_eq!(decode_from_group(&p).unwrap(), m);
            assert_eq!(encode_to_group(&m).unwrap(), p);
            seen.push(p.to_bytes());
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn random_points_do_not_decode() {
        let mut r = rng(3);
        let p = GroupElement::generator().mul(&Scalar::random_nonzero(&mut r));
        assert_eq!(decode_from_group(&p), Err(CryptoError::DecodeFailure));
        assert_eq!(decode_from_group(&GroupElement::identity()), Err(CryptoError::DecodeFailure));
    }

    #[test]
    fn identity_plaintext() {
        let mut r = rng(4);
        let kp = VpkeKeyPair::generate(&mut r);
        let rr = Scalar::random_nonzero(&mut r);
        let ct = venc(&kp.public(), &GroupElement::identity(), &rr).unwrap();
        assert_eq!(ct.c2, GroupElement::generator().mul(&kp.secret().mul(&rr)));
    }

    #[test]
    fn venc_vdec_round_trip_and_zero_r() {
        let mut r = rng(5);
        let kp = VpkeKeyPair::generate(&mut r);
        for _ in 0..10 {
            let m = encode_to_group(&r.gen()).unwrap();
            let ct = venc(&kp.public(), &m, &Scalar::random_nonzero(&mut r)).unwrap();
            assert_eq!(vdec(kp.secret(), &ct), m);
        }
        assert_eq!(
            venc(&kp.public(), &GroupElement::generator(), &Scalar::zero()),
            Err(CryptoError::ZeroRandomness)
        );
    }

    #[test]
    fn completeness_over_random_instances() {
        let mut r = rng(6);
        for _ in 0..100 {
            let kp = VpkeKeyPair::generate(&mut r);
            let m = encode_to_group(&r.gen()).unwrap();
            let ct = venc(&kp.public(), &m, &Scalar::random_nonzero(&mut r)).unwrap();
            let (dm, proof) = prove_pke(&kp, &ct, &mut r);
            assert_eq!(dm, m);
            assert!(verify_pke(&kp.public(), &ct, &dm, &proof));
        }
    }

    #[test]
    fn soundness_spot_checks() {
        let mut r = rng(7);
        let kp = VpkeKeyPair::generate(&mut r);
        let m = encode_to_group(&r.gen()).unwrap();
        let ct = venc(&kp.public(), &m, &Scalar::random_nonzero(&mut r)).unwrap();
        let (dm, proof) = prove_pke(&kp, &ct, &mut r);
        let g = GroupElement::generator();

        assert!(!verify_pke(&kp.public(), &ct, &dm.add(&g), &proof));
        let bad_a = VpkeProof { a: proof.a.add(&g), ..proof };
        let bad_b = VpkeProof { b: proof.b.add(&g), ..proof };
        let bad_z = VpkeProof { z: proof.z.add(&Scalar::from_u64(1)), ..proof };
        for p in [bad_a, bad_b, bad_z] {
            assert!(!verify_pke(&kp.public(), &ct, &dm, &p));
        }

        // Proof computed for a different ciphertext does not transfer.
        let m2 = encode_to_group(&r.gen()).unwrap();
        let ct2 = venc(&kp.public(), &m2, &Scalar::random_nonzero(&mut r)).unwrap();
        let (dm2, proof2) = prove_pke(&kp, &ct2, &mut r);
        assert!(verify_pke(&kp.public(), &ct2, &dm2, &proof2));
        assert!(!verify_pke(&kp.public(), &ct, &dm, &proof2));
        assert!(!verify_pke(&kp.public(), &ct, &dm2, &proof2));
    }

    #[test]
    fn encodings_round_trip() {
        let mut r = rng(8);
        let kp = VpkeKeyPair::generate(&mut r);
        let m = encode_to_group(&r.gen()).unwrap();
        let ct = venc(&kp.public(), &m, &Scalar::random_nonzero(&mut r)).unwrap();
        let (_, proof) = prove_pke(&kp, &ct, &mut r);
        assert_eq!(VpkeCiphertext::from_bytes(&ct.to_bytes()).unwrap(), ct);
        assert_eq!(VpkeProof::from_bytes(&proof.to_bytes()).unwrap(), proof);
        assert_eq!(GroupElement::from_bytes(&[0u8; 49]).unwrap(), GroupElement::identity());
        assert!(GroupElement::from_bytes(&[0xffu8; 49]).is_err());
        assert!(Scalar::from_bytes(&[0xffu8; 48]).is_err());
    }
}
