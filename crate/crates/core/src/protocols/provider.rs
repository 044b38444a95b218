use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{has, sid_for, Action, Endpoint, Message, Outbound, Party, SessionConfig};
use crate::arbiter::{Call, Event, Mode, PartyId};
use crate::crypto::{hash_parts, sym_encrypt, Digest, GroupElement, PublicKey, SigKeyPair, SymKey};
use crate::keytree::{KeyTree, RevealSet};
use crate::merkle::MerkleTree;
use crate::par::{self, Exec};
use crate::vfd::{content_id, key_reveal_message, key_request_message, mtree_message, Receipt, SignedChunk};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Init,
    AwaitJoin,
    AwaitReady,
    Idle,
    InSession,
    Withdrawing,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Loop {
    AwaitKeyReq,
    AwaitReceipt,
    Ended,
}

#[derive(Clone, Debug)]
struct StreamSession {
    z: u64,
    state: Loop,
    latest: Option<Receipt>,
    claimed: u64,
    closed: bool,
    inflated_sent: bool,
}

#[derive(Clone, Debug)]
struct Session {
    consumer: PartyId,
    pk_c: PublicKey,
    vpk_c: Option<GroupElement>,
    sid: Digest,
    stream: StreamSession,
}

pub struct Provider {
    cfg: SessionConfig,
    keys: SigKeyPair,
    address: Digest,
    content: Arc<Vec<Vec<u8>>>,
    mt: MerkleTree,
    kt: KeyTree,
    exec: Exec,
    rng: ChaCha20Rng,
    stage: Stage,
    deadline: Option<u64>,
    pk_d: Option<PublicKey>,
    nonce: u64,
    sessions_done: u64,
    session: Option<Session>,
}

/// Deterministic stand-in bytes for misbehavior injection.
fn junk(label: &[u8], i: u64) -> SymKey {
    SymKey(hash_parts(&[label, &i.to_be_bytes()]).0)
}

impl Provider {
    pub fn new(cfg: SessionConfig, keys: SigKeyPair, address: Digest, content: Arc<Vec<Vec<u8>>>, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mk = SymKey::random(&mut rng);
        let kt = KeyTree::generate(cfg.n, &mk).expect("validated chunk count");
        let mt = MerkleTree::build(&content).expect("validated chunk count");
        Provider {
            cfg,
            keys,
            address,
            content,
            mt,
            kt,
            exec: Exec::default(),
            rng,
            stage: Stage::Init,
            deadline: None,
            pk_d: None,
            nonce: 0,
            sessions_done: 0,
            session: None,
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn root(&self) -> Digest {
        self.mt.root()
    }

    pub fn public(&self) -> PublicKey {
        self.keys.public()
    }

    pub fn key_tree(&self) -> &KeyTree {
        &self.kt
    }

    pub fn merkle_tree(&self) -> &MerkleTree {
        &self.mt
    }

    fn cid(&self) -> Digest {
        content_id(&self.mt.root(), &self.address, &self.keys.public())
    }

    /// Encrypts and signs every chunk.
    pub fn prepare(&self, active: &[Action]) -> Arc<[SignedChunk]> {
        prepare_chunks(self.exec, &self.keys, &self.cid(), &self.kt, &self.content, active).into()
    }

    fn send_mtree(&self, to: PartyId, active: &[Action]) -> Outbound {
        let mut leaves = self.mt.leaves().to_vec();
        if has(active, &Action::ForgedMerkleTree) {
            leaves[0] = Digest(junk(b"forged-leaf", 1).0);
        }
        let sig = self.keys.sign(&mtree_message(&self.cid(), &leaves));
        Outbound::to_party(to, Message::MTree { leaves, sig })
    }

    fn reveal_set(&self, ctr: u64, active: &[Action]) -> RevealSet {
        let short = has(active, &Action::ShortReveal);
        let mut rk = if short && ctr <= 1 {
            RevealSet { elements: Vec::new() }
        } else {
            self.kt.reveal(if short { ctr - 1 } else { ctr }).expect("ctr within range")
        };
        for a in active {
            if let Action::WrongRevealKey { index } = a {
                let leaf = self.cfg.n + index - 2;
                for e in &mut rk.elements {
                    let (l, r) = crate::keytree::subtree_leaves(self.cfg.n, e.position).expect("valid position");
                    if (l..=r).contains(&leaf) {
                        e.value = junk(b"wrong-reveal", *index);
                    }
                }
            }
        }
        rk
    }

    fn on_event(&mut self, now: u64, ev: &Event, active: &[Action]) -> Vec<Outbound> {
        match ev {
            Event::Joined { pk_d } if self.stage == Stage::AwaitJoin => {
                self.pk_d = Some(*pk_d);
                self.stage = Stage::AwaitReady;
                self.deadline = Some(now + self.cfg.setup_timer());
                vec![Outbound::to_party(PartyId::Deliverer, Message::Sell { chunks: self.prepare(active) })]
            }
            Event::Ready if matches!(self.stage, Stage::AwaitReady | Stage::Idle) => {
                self.stage = Stage::Idle;
                self.deadline = Some(now + self.cfg.setup_timer());
                vec![]
            }
            Event::Initiated { consumer, pk_c, vpk_c } => {
                if !matches!(self.stage, Stage::Idle | Stage::Withdrawing) {
                    return vec![];
                }
                let sid = sid_for(&self.mt.root(), &self.address, &self.keys.public(), pk_c, self.nonce);
                let stream_deadline = (self.cfg.mode == Mode::Stream).then(|| now + self.cfg.stream_cycle_timer());
                self.session = Some(Session {
                    consumer: *consumer,
                    pk_c: *pk_c,
                    vpk_c: *vpk_c,
                    sid,
                    stream: StreamSession {
                        z: 0,
                        state: if stream_deadline.is_some() { Loop::AwaitKeyReq } else { Loop::Ended },
                        latest: None,
                        claimed: 0,
                        closed: false,
                        inflated_sent: false,
                    },
                });
                self.stage = Stage::InSession;
                self.deadline = stream_deadline;
                vec![self.send_mtree(*consumer, active)]
            }
            Event::Revealing { ctr } if self.stage == Stage::InSession => {
                let Some(s) = &self.session else { return vec![] };
                let vpk = s.vpk_c.expect("download sessions carry a decryption key");
                let rk = self.reveal_set(*ctr, active);
                let erk = rk.encrypt(&vpk, &mut self.rng).expect("tree keys encode");
                vec![Outbound::call(Call::RevealKeys { erk })]
            }
            Event::Received | Event::PayingDelivery | Event::PayingRevealing if self.stage == Stage::InSession => {
                let Some(s) = &mut self.session else { return vec![] };
                s.stream.closed = true;
                if s.stream.state != Loop::Ended {
                    s.stream.state = Loop::Ended;
                    self.deadline = None;
                }
                self.maybe_claim(active)
            }
            Event::Sold | Event::NotSold if self.stage == Stage::InSession => {
                self.session = None;
                self.sessions_done += 1;
                self.nonce += 1;
                if self.sessions_done < self.cfg.theta {
                    self.stage = Stage::AwaitReady;
                    self.deadline = Some(now + self.cfg.setup_timer());
                    vec![Outbound::call(Call::Reset)]
                } else {
                    self.stage = Stage::Done;
                    self.deadline = None;
                    vec![]
                }
            }
            Event::Withdrawn { .. } => {
                self.stage = Stage::Done;
                self.deadline = None;
                vec![]
            }
            _ => vec![],
        }
    }

    /// Submits the latest receipt once the contract accepts claims.
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
            out.push(Outbound::call(Call::ClaimRevealing { receipt: forged }));
        }
        st.claimed = latest.index;
        out.push(Outbound::call(Call::ClaimRevealing { receipt: latest }));
        out
    }

    fn on_key_req(&mut self, now: u64, from: PartyId, index: u64, sig: &crate::crypto::Signature, active: &[Action]) -> Vec<Outbound> {
        let n = self.cfg.n;
        let Some(s) = &mut self.session else { return vec![] };
        if s.consumer != from || s.stream.state != Loop::AwaitKeyReq {
            return vec![];
        }
        let valid = index == s.stream.z + 1
            && index <= n
            && s.pk_c.verify(&key_request_message(&s.sid, index, &s.pk_c), sig);
        if !valid {
            s.stream.state = Loop::Ended;
            self.deadline = None;
            return vec![];
        }
        let key = if has(active, &Action::WrongRevealKey { index }) {
            junk(b"wrong-reveal", index)
        } else {
            self.kt.chunk_key(index).expect("index within range")
        };
        let sig = self.keys.sign(&key_reveal_message(&s.sid, index, &key));
        s.stream.state = Loop::AwaitReceipt;
        self.deadline = Some(now + self.cfg.party_timer());
        vec![Outbound::to_party(from, Message::Reveal { index, key, sig })]
    }

    fn on_receipt(&mut self, now: u64, from: PartyId, r: &Receipt, active: &[Action]) -> Vec<Outbound> {
        let n = self.cfg.n;
        let pk_p = self.keys.public();
        let Some(s) = &mut self.session else { return vec![] };
        if s.consumer != from || self.cfg.mode != Mode::Stream {
            return vec![];
        }
        let valid = r.sid == s.sid && r.verify(&s.pk_c, &pk_p);
        match s.stream.state {
            Loop::AwaitReceipt if valid && r.index == s.stream.z + 1 => {
                s.stream.z += 1;
                s.stream.latest = Some(*r);
                if s.stream.z == n {
                    s.stream.state = Loop::Ended;
                    self.deadline = None;
                } else {
                    s.stream.state = Loop::AwaitKeyReq;
                    self.deadline = Some(now + self.cfg.stream_cycle_timer());
                }
            }
            // A valid receipt ahead of the loop (a consumer vouching for
            // more than was revealed) still certifies payment.
            _ if valid && r.index > s.stream.latest.map_or(0, |l| l.index) && r.index <= n => {
                s.stream.latest = Some(*r);
                s.stream.state = Loop::Ended;
                self.deadline = None;
            }
            _ => {
                s.stream.state = Loop::Ended;
                self.deadline = None;
            }
        }
        self.maybe_claim(active)
    }
}

/// Encrypts every chunk under its tree key and signs it, applying any
/// provider-side content corruption in `active`.
pub fn prepare_chunks(
    exec: Exec,
    keys: &SigKeyPair,
    cid: &Digest,
    kt: &KeyTree,
    content: &[Vec<u8>],
    active: &[Action],
) -> Vec<SignedChunk> {
    par::map_range(exec, 0..content.len(), |idx| {
        let i = idx as u64 + 1;
        let garbage;
        let plain: &[u8] = if has(active, &Action::GarbageChunk { index: i }) {
            garbage = vec![0xA5u8; content[idx].len()];
            &garbage
        } else {
            &content[idx]
        };
        let key = if has(active, &Action::WrongChunkKey { index: i }) {
            junk(b"wrong-chunk-key", i)
        } else {
            kt.chunk_key(i).expect("index within range")
        };
        let ct = sym_encrypt(&key, plain).expect("chunk size is a multiple of the block size");
        SignedChunk::sign(keys, cid, i, ct)
    })
}

impl Party for Provider {
    fn id(&self) -> PartyId {
        PartyId::Provider
    }

    fn on_message(&mut self, now: u64, from: Endpoint, msg: &Message, active: &[Action]) -> Vec<Outbound> {
        if self.stage == Stage::Done {
            return vec![];
        }
        match (from, msg) {
            (Endpoint::Contract, Message::Event(ev)) => self.on_event(now, ev, active),
            (Endpoint::Party(p), Message::KeyReq { index, sig }) => self.on_key_req(now, p, *index, sig, active),
            (Endpoint::Party(p), Message::Receipt(r)) => self.on_receipt(now, p, r, active),
            _ => vec![],
        }
    }

    fn on_tick(&mut self, now: u64, _active: &[Action]) -> Vec<Outbound> {
        match self.stage {
            Stage::Init => {
                self.stage = Stage::AwaitJoin;
                self.deadline = Some(now + self.cfg.setup_timer());
                vec![Outbound::call(Call::Start {
                    pk_p: self.keys.public(),
                    root: self.mt.root(),
                    theta: self.cfg.theta,
                    n: self.cfg.n,
                    prices: self.cfg.prices,
                })]
            }
            Stage::AwaitJoin | Stage::AwaitReady | Stage::Idle if self.deadline.is_some_and(|d| now >= d) => {
                self.stage = Stage::Withdrawing;
                self.deadline = None;
                vec![Outbound::call(Call::Withdraw)]
            }
            Stage::InSession if self.deadline.is_some_and(|d| now >= d) => {
                if let Some(s) = &mut self.session {
                    s.stream.state = Loop::Ended;
                }
                self.deadline = None;
                vec![]
            }
            _ => vec![],
        }
    }

    fn next_deadline(&self) -> Option<u64> {
        match self.stage {
            Stage::Init => Some(0),
            Stage::Done => None,
            _ => self.deadline,
        }
    }

    fn halted(&self) -> bool {
        self.stage == Stage::Done
    }
}
