//! Canonical byte encoding of every protocol message, contract call and
//! contract event. Integers are big-endian, variable-length sequences are
//! prefixed with a 4-byte count, and optional values with a presence byte.

use std::sync::Arc;

use thiserror::Error;

use crate::arbiter::{Call, Event, PartyId, PomDownload, PomStream, Prices};
use crate::crypto::{
    Digest, GroupElement, PublicKey, Signature, SymKey, VpkeProof, DIGEST_LEN, GROUP_ELEMENT_LEN,
    PUBLIC_KEY_LEN, SIGNATURE_LEN,
};
use crate::keytree::{EncryptedKey, EncryptedRevealSet};
use crate::merkle::MerkleProof;
use crate::protocols::Message;
use crate::vfd::{Receipt, SignedChunk};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("unknown kind tag {0:#04x}")]
    UnknownTag(u8),
    #[error("input truncated")]
    Truncated,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("malformed {0}")]
    Malformed(&'static str),
}

/// Every kind tag with its name, in tag order.
pub const KIND_TABLE: &[(u8, &str)] = &[
    (0x10, "sell"),
    (0x11, "mtree"),
    (0x12, "deliver"),
    (0x13, "receipt"),
    (0x14, "key_req"),
    (0x15, "reveal"),
    (0x20, "start"),
    (0x21, "join"),
    (0x22, "prepared"),
    (0x23, "consume"),
    (0x24, "delivered"),
    (0x25, "vfd_proof"),
    (0x26, "reveal_keys"),
    (0x27, "wrong_rk"),
    (0x28, "pom_download"),
    (0x29, "received"),
    (0x2A, "pom_stream"),
    (0x2B, "claim_delivery"),
    (0x2C, "claim_revealing"),
    (0x2D, "reset"),
    (0x2E, "withdraw"),
    (0x40, "started"),
    (0x41, "joined"),
    (0x42, "ready"),
    (0x43, "initiated"),
    (0x44, "get_vfd_proof"),
    (0x45, "revealing"),
    (0x46, "revealed"),
    (0x47, "sold"),
    (0x48, "not_sold"),
    (0x49, "received_event"),
    (0x4A, "paying_delivery"),
    (0x4B, "paying_revealing"),
    (0x4C, "withdrawn"),
];

pub fn tag_of(kind: &str) -> Option<u8> {
    KIND_TABLE.iter().find(|(_, k)| *k == kind).map(|(t, _)| *t)
}

struct W(Vec<u8>);

impl W {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.raw(b);
    }
    fn party(&mut self, p: PartyId) {
        match p {
            PartyId::Provider => self.u8(0),
            PartyId::Deliverer => self.u8(1),
            PartyId::Consumer(k) => {
                self.u8(2);
                self.raw(&k.to_be_bytes());
            }
        }
    }
    fn chunk(&mut self, c: &SignedChunk) {
        self.u64(c.index);
        self.bytes(&c.ciphertext);
        self.raw(&c.sig.0);
    }
    fn receipt(&mut self, r: &Receipt) {
        self.raw(&r.sid.0);
        self.u64(r.index);
        self.raw(&r.sig.0);
    }
    fn group_opt(&mut self, g: &Option<GroupElement>) {
        match g {
            Some(g) => {
                self.u8(1);
                self.raw(&g.to_bytes());
            }
            None => self.u8(0),
        }
    }
    fn prices(&mut self, p: &Prices) {
        self.u64(p.b_p);
        self.u64(p.b_c);
        self.u64(p.b_pf);
    }
}

struct R<'a>(&'a [u8]);

impl<'a> R<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.0.len() < n {
            return Err(CodecError::Truncated);
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Ok(a)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, CodecError> {
        Ok(u32::from_be_bytes(self.arr()?) as usize)
    }
    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.arr()?))
    }
    fn bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let n = self.u32()?;
        Ok(self.take(n)?.to_vec())
    }
    fn digest(&mut self) -> Result<Digest, CodecError> {
        Ok(Digest(self.arr::<DIGEST_LEN>()?))
    }
    fn pk(&mut self) -> Result<PublicKey, CodecError> {
        Ok(PublicKey(self.arr::<PUBLIC_KEY_LEN>()?))
    }
    fn sig(&mut self) -> Result<Signature, CodecError> {
        Ok(Signature(self.arr::<SIGNATURE_LEN>()?))
    }
    fn group(&mut self) -> Result<GroupElement, CodecError> {
        GroupElement::from_bytes(self.take(GROUP_ELEMENT_LEN)?).map_err(|_| CodecError::Malformed("group element"))
    }
    fn group_opt(&mut self) -> Result<Option<GroupElement>, CodecError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.group()?)),
            _ => Err(CodecError::Malformed("option flag")),
        }
    }
    fn party(&mut self) -> Result<PartyId, CodecError> {
        match self.u8()? {
            0 => Ok(PartyId::Provider),
            1 => Ok(PartyId::Deliverer),
            2 => Ok(PartyId::Consumer(u32::from_be_bytes(self.arr()?))),
            _ => Err(CodecError::Malformed("party id")),
        }
    }
    fn chunk(&mut self) -> Result<SignedChunk, CodecError> {
        Ok(SignedChunk { index: self.u64()?, ciphertext: self.bytes()?, sig: self.sig()? })
    }
    fn receipt(&mut self) -> Result<Receipt, CodecError> {
        Ok(Receipt { sid: self.digest()?, index: self.u64()?, sig: self.sig()? })
    }
    fn prices(&mut self) -> Result<Prices, CodecError> {
        Ok(Prices { b_p: self.u64()?, b_c: self.u64()?, b_pf: self.u64()? })
    }
    fn mtp(&mut self) -> Result<MerkleProof, CodecError> {
        let depth = *self.0.get(8).ok_or(CodecError::Truncated)? as usize;
        let raw = self.take(MerkleProof::encoded_len_for_depth(depth))?;
        MerkleProof::from_bytes(raw).map_err(|_| CodecError::Malformed("merkle proof"))
    }
    fn erk(&mut self) -> Result<EncryptedRevealSet, CodecError> {
        let count = *self.0.first().ok_or(CodecError::Truncated)? as usize;
        let raw = self.take(1 + count * EncryptedKey::LEN)?;
        EncryptedRevealSet::from_bytes(raw).map_err(|_| CodecError::Malformed("reveal set"))
    }
    fn proof(&mut self) -> Result<VpkeProof, CodecError> {
        VpkeProof::from_bytes(self.take(VpkeProof::LEN)?).map_err(|_| CodecError::Malformed("decryption proof"))
    }
}

fn tag(kind: &str) -> u8 {
    tag_of(kind).expect("every kind has a tag")
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut w = W(Vec::new());
    w.u8(tag(msg.kind()));
    match msg {
        Message::Sell { chunks } => {
            w.u32(chunks.len());
            for c in chunks.iter() {
                w.chunk(c);
            }
        }
        Message::MTree { leaves, sig } => {
            w.u32(leaves.len());
            for l in leaves {
                w.raw(&l.0);
            }
            w.raw(&sig.0);
        }
        Message::Deliver(c) => w.chunk(c),
        Message::Receipt(r) => w.receipt(r),
        Message::KeyReq { index, sig } => {
            w.u64(*index);
            w.raw(&sig.0);
        }
        Message::Reveal { index, key, sig } => {
            w.u64(*index);
            w.raw(&key.0);
            w.raw(&sig.0);
        }
        Message::Call(c) => encode_call(&mut w, c),
        Message::Event(e) => encode_event(&mut w, e),
    }
    w.0
}

fn encode_call(w: &mut W, c: &Call) {
    match c {
        Call::Start { pk_p, root, theta, n, prices } => {
            w.raw(&pk_p.0);
            w.raw(&root.0);
            w.u64(*theta);
            w.u64(*n);
            w.prices(prices);
        }
        Call::Join { pk_d } => w.raw(&pk_d.0),
        Call::Consume { pk_c, vpk_c } => {
            w.raw(&pk_c.0);
            w.group_opt(vpk_c);
        }
        Call::VfdProof { receipt } => match receipt {
            Some(r) => {
                w.u8(1);
                w.receipt(r);
            }
            None => w.u8(0),
        },
        Call::RevealKeys { erk } => w.raw(&erk.to_bytes()),
        Call::PomDownload(p) => {
            w.u64(p.i);
            w.u64(p.j);
            w.chunk(&p.chunk);
            w.raw(&p.leaf.0);
            w.raw(&p.mtp.to_bytes());
            w.raw(&p.rk_element.to_bytes());
            w.raw(&p.erk.to_bytes());
            w.raw(&p.proof.to_bytes());
        }
        Call::PomStream(p) => {
            w.u64(p.i);
            w.chunk(&p.chunk);
            w.raw(&p.key.0);
            w.raw(&p.key_sig.0);
            w.raw(&p.leaf.0);
            w.raw(&p.mtp.to_bytes());
        }
        Call::ClaimDelivery { receipt } | Call::ClaimRevealing { receipt } => w.receipt(receipt),
        Call::Prepared | Call::Delivered | Call::WrongRk | Call::Received | Call::Reset | Call::Withdraw => {}
    }
}

fn encode_event(w: &mut W, e: &Event) {
    match e {
        Event::Started { pk_p, root, theta, n, prices } => {
            w.raw(&pk_p.0);
            w.raw(&root.0);
            w.u64(*theta);
            w.u64(*n);
            w.prices(prices);
        }
        Event::Joined { pk_d } => w.raw(&pk_d.0),
        Event::Initiated { consumer, pk_c, vpk_c } => {
            w.party(*consumer);
            w.raw(&pk_c.0);
            w.group_opt(vpk_c);
        }
        Event::Revealing { ctr } => w.u64(*ctr),
        Event::Revealed { erk } => w.raw(&erk.to_bytes()),
        Event::Withdrawn { amount } => w.u64(*amount),
        Event::Ready
        | Event::GetVfdProof
        | Event::Sold
        | Event::NotSold
        | Event::Received
        | Event::PayingDelivery
        | Event::PayingRevealing => {}
    }
}

pub fn decode(bytes: &[u8]) -> Result<Message, CodecError> {
    let mut r = R(bytes);
    let t = r.u8()?;
    let kind = KIND_TABLE.iter().find(|(x, _)| *x == t).map(|(_, k)| *k).ok_or(CodecError::UnknownTag(t))?;
    let msg = match kind {
        "sell" => {
            let count = r.u32()?;
            let mut chunks = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                chunks.push(r.chunk()?);
            }
            Message::Sell { chunks: Arc::from(chunks) }
        }
        "mtree" => {
            let count = r.u32()?;
            let mut leaves = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                leaves.push(r.digest()?);
            }
            Message::MTree { leaves, sig: r.sig()? }
        }
        "deliver" => Message::Deliver(r.chunk()?),
        "receipt" => Message::Receipt(r.receipt()?),
        "key_req" => Message::KeyReq { index: r.u64()?, sig: r.sig()? },
        "reveal" => Message::Reveal { index: r.u64()?, key: SymKey(r.arr()?), sig: r.sig()? },
        "start" => Message::Call(Call::Start {
            pk_p: r.pk()?,
            root: r.digest()?,
            theta: r.u64()?,
            n: r.u64()?,
            prices: r.prices()?,
        }),
        "join" => Message::Call(Call::Join { pk_d: r.pk()? }),
        "prepared" => Message::Call(Call::Prepared),
        "consume" => Message::Call(Call::Consume { pk_c: r.pk()?, vpk_c: r.group_opt()? }),
        "delivered" => Message::Call(Call::Delivered),
        "vfd_proof" => {
            let receipt = match r.u8()? {
                0 => None,
                1 => Some(r.receipt()?),
                _ => return Err(CodecError::Malformed("option flag")),
            };
            Message::Call(Call::VfdProof { receipt })
        }
        "reveal_keys" => Message::Call(Call::RevealKeys { erk: r.erk()? }),
        "wrong_rk" => Message::Call(Call::WrongRk),
        "pom_download" => Message::Call(Call::PomDownload(Box::new(PomDownload {
            i: r.u64()?,
            j: r.u64()?,
            chunk: r.chunk()?,
            leaf: r.digest()?,
            mtp: r.mtp()?,
            rk_element: r.group()?,
            erk: r.erk()?,
            proof: r.proof()?,
        }))),
        "received" => Message::Call(Call::Received),
        "pom_stream" => Message::Call(Call::PomStream(Box::new(PomStream {
            i: r.u64()?,
            chunk: r.chunk()?,
            key: SymKey(r.arr()?),
            key_sig: r.sig()?,
            leaf: r.digest()?,
            mtp: r.mtp()?,
        }))),
        "claim_delivery" => Message::Call(Call::ClaimDelivery { receipt: r.receipt()? }),
        "claim_revealing" => Message::Call(Call::ClaimRevealing { receipt: r.receipt()? }),
        "reset" => Message::Call(Call::Reset),
        "withdraw" => Message::Call(Call::Withdraw),
        "started" => Message::Event(Event::Started {
            pk_p: r.pk()?,
            root: r.digest()?,
            theta: r.u64()?,
            n: r.u64()?,
            prices: r.prices()?,
        }),
        "joined" => Message::Event(Event::Joined { pk_d: r.pk()? }),
        "ready" => Message::Event(Event::Ready),
        "initiated" => Message::Event(Event::Initiated { consumer: r.party()?, pk_c: r.pk()?, vpk_c: r.group_opt()? }),
        "get_vfd_proof" => Message::Event(Event::GetVfdProof),
        "revealing" => Message::Event(Event::Revealing { ctr: r.u64()? }),
        "revealed" => Message::Event(Event::Revealed { erk: r.erk()? }),
        "sold" => Message::Event(Event::Sold),
        "not_sold" => Message::Event(Event::NotSold),
        "received_event" => Message::Event(Event::Received),
        "paying_delivery" => Message::Event(Event::PayingDelivery),
        "paying_revealing" => Message::Event(Event::PayingRevealing),
        "withdrawn" => Message::Event(Event::Withdrawn { amount: r.u64()? }),
        _ => unreachable!("kind table and decoder agree"),
    };
    if !r.0.is_empty() {
        return Err(CodecError::Trailing(r.0.len()));
    }
    Ok(msg)
}

/// Encoded size without keeping the buffer.
pub fn encoded_len(msg: &Message) -> usize {
    encode(msg).len()
}
