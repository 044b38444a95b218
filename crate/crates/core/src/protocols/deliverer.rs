use std::sync::Arc;

use super::{has, sid_for, Action, Endpoint, Message, Outbound, Party, SessionConfig};
use crate::arbiter::{Call, Event, Mode, PartyId};
use crate::crypto::{Digest, PublicKey, SigKeyPair};
use crate::par::{self, Exec};
use crate::vfd::{content_id, Receipt, SignedChunk, VfdSender};

#[derive(Clone, Debug)]
struct StreamLoop {
    /// Last chunk index sent.
    y: u64,
    latest: Option<Receipt>,
    ended: bool,
    closed: bool,
    claimed: u64,
    inflated_sent: bool,
}

#[derive(Clone, Debug)]
struct Session {
    consumer: PartyId,
    pk_c: PublicKey,
    sid: Digest,
    sender: Option<VfdSender>,
    /// Receipt accepted outside the sender (colluding consumer).
    side_proof: Option<Receipt>,
    stream: StreamLoop,
    proof_sent: bool,
}

pub struct Deliverer {
    cfg: SessionConfig,
    keys: SigKeyPair,
    address: Digest,
    pk_p: Option<PublicKey>,
    root: Option<Digest>,
    theta: u64,
    chunks: Option<Arc<[SignedChunk]>>,
    sessions_done: u64,
    session: Option<Session>,
    deadline: Option<u64>,
    halted: bool,
}

/// Puts a chunk on the wire, applying in-transit corruption if programmed.
fn wire(mut c: SignedChunk, active: &[Action]) -> Message {
    if has(active, &Action::CorruptChunkInTransit { index: c.index }) {
        if let Some(b) = c.ciphertext.first_mut() {
            *b ^= 0x01;
        }
    }
    Message::Deliver(c)
}

impl Deliverer {
    pub fn new(cfg: SessionConfig, keys: SigKeyPair, address: Digest) -> Self {
        Deliverer {
            cfg,
            keys,
            address,
            pk_p: None,
            root: None,
            theta: 0,
            chunks: None,
            sessions_done: 0,
            session: None,
            deadline: None,
            halted: false,
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keys.public()
    }

    /// Ciphertexts stored after a verified sell.
    pub fn stored_chunks(&self) -> Option<&Arc<[SignedChunk]>> {
        self.chunks.as_ref()
    }

    fn on_sell(&mut self, chunks: &Arc<[SignedChunk]>) -> Vec<Outbound> {
        if self.chunks.is_some() {
            return vec![];
        }
        let (Some(pk_p), Some(root)) = (self.pk_p, self.root) else { return vec![] };
        let cid = content_id(&root, &self.address, &pk_p);
        let ok = chunks.len() as u64 == self.cfg.n
            && chunks.iter().enumerate().all(|(k, c)| c.index == k as u64 + 1)
            && par::map_with(Exec::default(), chunks, |c| c.is_valid(&pk_p, &cid)).into_iter().all(|v| v);
        if !ok {
            // Refuse the job; the provider's setup timer reclaims its deposit.
            self.halted = true;
            return vec![];
        }
        self.chunks = Some(chunks.clone());
        vec![Outbound::call(Call::Prepared)]
    }

    fn start_session(&mut self, now: u64, consumer: PartyId, pk_c: PublicKey, active: &[Action]) -> Vec<Outbound> {
        let (Some(chunks), Some(root)) = (self.chunks.clone(), self.root) else { return vec![] };
        let sid = sid_for(&root, &self.address, &self.keys.public(), &pk_c, self.sessions_done);
        let sybil = has(active, &Action::SybilReceipts);
        let mut s = Session {
            consumer,
            pk_c,
            sid,
            sender: None,
            side_proof: None,
            stream: StreamLoop { y: 0, latest: None, ended: sybil, closed: false, claimed: 0, inflated_sent: false },
            proof_sent: false,
        };
        let mut out = Vec::new();
        match self.cfg.mode {
            Mode::Download => {
                let mut sender = VfdSender::new(chunks, sid, self.keys.public(), pk_c, self.cfg.party_timer());
                if !sybil {
                    if let Some(c) = sender.activate(now) {
                        out.push(Outbound::to_party(consumer, wire(c, active)));
                    }
                }
                s.sender = Some(sender);
            }
            Mode::Stream if !sybil => {
                s.stream.y = 1;
                out.push(Outbound::to_party(consumer, wire(chunks[0].clone(), active)));
                self.deadline = Some(now + self.cfg.stream_cycle_timer());
            }
            Mode::Stream => {}
        }
        self.session = Some(s);
        out
    }

    fn on_receipt(&mut self, now: u64, from: PartyId, r: &Receipt, active: &[Action]) -> Vec<Outbound> {
        let n = self.cfg.n;
        let pk_d = self.keys.public();
        let sybil = has(active, &Action::SybilReceipts);
        let Some(s) = &mut self.session else { return vec![] };
        if s.consumer != from {
            return vec![];
        }
        let valid = r.sid == s.sid && r.verify(&s.pk_c, &pk_d) && r.index >= 1 && r.index <= n;
        let mut out = Vec::new();
        match self.cfg.mode {
            Mode::Download => {
                if sybil {
                    if valid && r.index > s.side_proof.map_or(0, |p| p.index) {
                        s.side_proof = Some(*r);
                    }
                } else if let Some(sender) = &mut s.sender {
                    if let Some(c) = sender.on_receipt(now, r) {
                        out.push(Outbound::to_party(from, wire(c, active)));
                    }
                }
            }
            Mode::Stream => {
                let st = &mut s.stream;
                if sybil {
                    if valid && r.index > st.latest.map_or(0, |l| l.index) {
                        st.latest = Some(*r);
                    }
                } else if !st.ended && valid && r.index == st.y {
                    st.latest = Some(*r);
                    if st.y == n {
                        st.ended = true;
                        self.deadline = None;
                    } else {
                        st.y += 1;
                        let c = self.chunks.as_ref().expect("prepared")[(st.y - 1) as usize].clone();
                        out.push(Outbound::to_party(from, wire(c, active)));
                        self.deadline = Some(now + self.cfg.stream_cycle_timer());
                    }
                } else if !st.ended {
                    st.ended = true;
                    self.deadline = None;
                }
                out.extend(self.maybe_claim(active));
            }
        }
        out
    }

    fn maybe_claim(&mut self, active: &[Action]) -> Vec<Outbound> {
        let n = self.cfg.n;
        let Some(s) = &mut self.session else { return vec![] };
        let st = &mut s.stream;
        let Some(latest) = st.latest else { return vec![] };
        if latest.index <= st.claimed || !(latest.index == n || st.closed) {
            return vec![];
        }
        let mut out = Vec::new();
        if has(active, &Action::InflatedClaim) && !st.inflated_sent {
            st.inflated_sent = true;
            let forged = Receipt::sign(&self.keys, s.sid, n, &self.keys.public());
            out.push(Outbound::call(Call::ClaimDelivery { receipt: forged }));
        }
        st.claimed = latest.index;
        out.push(Outbound::call(Call::ClaimDelivery { receipt: latest }));
        out
    }

    fn vfd_proof(&mut self, active: &[Action]) -> Vec<Outbound> {
        let n = self.cfg.n;
        let Some(s) = &mut self.session else { return vec![] };
        if s.proof_sent {
            return vec![];
        }
        s.proof_sent = true;
        // The contract has closed delivery; nothing sent from here on is payable.
        if let Some(sender) = &mut s.sender {
            sender.halt();
        }
        let proof = s.side_proof.or_else(|| s.sender.as_ref().and_then(|x| x.proof().copied()));
        let mut out = Vec::new();
        if has(active, &Action::InflatedClaim) {
            let forged = Receipt::sign(&self.keys, s.sid, n, &self.keys.public());
            out.push(Outbound::call(Call::VfdProof { receipt: Some(forged) }));
        }
        out.push(Outbound::call(Call::VfdProof { receipt: proof }));
        out
    }

    fn on_event(&mut self, now: u64, ev: &Event, active: &[Action]) -> Vec<Outbound> {
        match ev {
            Event::Started { pk_p, root, theta, n, .. } if self.pk_p.is_none() => {
                if *n != self.cfg.n {
                    self.halted = true;
                    return vec![];
                }
                self.pk_p = Some(*pk_p);
                self.root = Some(*root);
                self.theta = *theta;
                vec![Outbound::call(Call::Join { pk_d: self.keys.public() })]
            }
            Event::Initiated { consumer, pk_c, .. } if self.session.is_none() => {
                self.start_session(now, *consumer, *pk_c, active)
            }
            Event::GetVfdProof => self.vfd_proof(active),
            Event::Received | Event::PayingDelivery | Event::PayingRevealing => {
                let Some(s) = &mut self.session else { return vec![] };
                s.stream.closed = true;
                if !s.stream.ended {
                    s.stream.ended = true;
                    self.deadline = None;
                }
                self.maybe_claim(active)
            }
            Event::Sold | Event::NotSold if self.session.is_some() => {
                self.session = None;
                self.deadline = None;
                self.sessions_done += 1;
                if self.sessions_done >= self.theta {
                    self.halted = true;
                }
                vec![]
            }
            Event::Withdrawn { .. } if self.session.is_none() => {
                self.halted = true;
                vec![]
            }
            _ => vec![],
        }
    }
}

impl Party for Deliverer {
    fn id(&self) -> PartyId {
        PartyId::Deliverer
    }

    fn on_message(&mut self, now: u64, from: Endpoint, msg: &Message, active: &[Action]) -> Vec<Outbound> {
        if self.halted {
            return vec![];
        }
        match (from, msg) {
            (Endpoint::Contract, Message::Event(ev)) => self.on_event(now, ev, active),
            (Endpoint::Party(PartyId::Provider), Message::Sell { chunks }) => self.on_sell(chunks),
            (Endpoint::Party(p @ PartyId::Consumer(_)), Message::Receipt(r)) => self.on_receipt(now, p, r, active),
            _ => vec![],
        }
    }

    fn on_tick(&mut self, now: u64, _active: &[Action]) -> Vec<Outbound> {
        if let Some(s) = &mut self.session {
            if let Some(sender) = &mut s.sender {
                sender.on_tick(now);
            }
            if self.deadline.is_some_and(|d| now >= d) {
                s.stream.ended = true;
                self.deadline = None;
            }
        }
        vec![]
    }

    fn next_deadline(&self) -> Option<u64> {
        if self.halted {
            return None;
        }
        let sender = self.session.as_ref().and_then(|s| s.sender.as_ref()).and_then(VfdSender::next_deadline);
        match (sender, self.deadline) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn halted(&self) -> bool {
        self.halted
    }
}
