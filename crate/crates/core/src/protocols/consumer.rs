use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{has, sid_for, Action, Endpoint, Message, Outbound, Party, SessionConfig};
use crate::arbiter::{Call, Event, Mode, PartyId, PomDownload, PomStream};
use crate::crypto::{
    decode_from_group, hash, prove_pke, sym_decrypt, vdec, Digest, PublicKey, SigKeyPair, Signature,
    SymKey, VpkeKeyPair,
};
use crate::keytree::{recover_chunk_key, subtree_leaves, validate_rkeys, EncryptedRevealSet, RevealSet, RevealedKey};
use crate::merkle::MerkleTree;
use crate::vfd::{content_id, key_request_message, key_reveal_message, mtree_message, Receipt, SignedChunk, VfdReceiver};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Waiting,
    Requested,
    Active,
    Done,
}

/// Streaming loop position.
#[derive(Clone, Debug)]
struct StreamLoop {
    /// Chunks completed so far.
    x: u64,
    pending: Option<SignedChunk>,
    ended: bool,
}

pub struct Consumer {
    id: PartyId,
    index: u32,
    cfg: SessionConfig,
    keys: SigKeyPair,
    vpke: VpkeKeyPair,
    address: Digest,
    rng: ChaCha20Rng,
    pk_p: Option<PublicKey>,
    pk_d: Option<PublicKey>,
    root: Option<Digest>,
    ready_seen: u32,
    stage: Stage,
    nonce: u64,
    mt: Option<MerkleTree>,
    buffered: Vec<SignedChunk>,
    receiver: Option<VfdReceiver>,
    delivered_sent: bool,
    stream: StreamLoop,
    ctr: u64,
    deadline: Option<u64>,
    output: BTreeMap<u64, Vec<u8>>,
    decrypted_at: BTreeMap<u64, u64>,
    disputed: Option<&'static str>,
}

impl Consumer {
    pub fn new(index: u32, cfg: SessionConfig, keys: SigKeyPair, vpke: VpkeKeyPair, address: Digest, seed: u64) -> Self {
        Consumer {
            id: PartyId::Consumer(index),
            index,
            cfg,
            keys,
            vpke,
            address,
            rng: ChaCha20Rng::seed_from_u64(seed),
            pk_p: None,
            pk_d: None,
            root: None,
            ready_seen: 0,
            stage: Stage::Waiting,
            nonce: 0,
            mt: None,
            buffered: Vec::new(),
            receiver: None,
            delivered_sent: false,
            stream: StreamLoop { x: 0, pending: None, ended: false },
            ctr: 0,
            deadline: None,
            output: BTreeMap::new(),
            decrypted_at: BTreeMap::new(),
            disputed: None,
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keys.public()
    }

    pub fn vpke(&self) -> &VpkeKeyPair {
        &self.vpke
    }

    /// Plaintext chunks the consumer accepted as valid, by index.
    pub fn output(&self) -> &BTreeMap<u64, Vec<u8>> {
        &self.output
    }

    /// Round at which each output chunk was decrypted.
    pub fn decrypted_at(&self) -> &BTreeMap<u64, u64> {
        &self.decrypted_at
    }

    /// Kind of complaint filed, if any.
    pub fn disputed(&self) -> Option<&'static str> {
        self.disputed
    }

    fn cid(&self) -> Digest {
        content_id(&self.root.expect("started"), &self.address, &self.pk_p.expect("started"))
    }

    fn sid_with(&self, pk_s: &PublicKey) -> Digest {
        sid_for(&self.root.expect("started"), &self.address, pk_s, &self.keys.public(), self.nonce)
    }

    fn finish(&mut self) {
        self.stage = Stage::Done;
        self.deadline = None;
    }

    fn on_initiated(&mut self, now: u64, active: &[Action]) -> Vec<Outbound> {
        self.stage = Stage::Active;
        self.nonce = u64::from(self.index);
        self.deadline = Some(now + self.cfg.party_timer());
        let (pk_p, pk_d) = (self.pk_p.expect("started"), self.pk_d.expect("joined"));
        let mut out = Vec::new();
        if self.cfg.mode == Mode::Download {
            let sid = self.sid_with(&pk_d);
            self.receiver = Some(VfdReceiver::new(
                self.cfg.n,
                pk_p,
                self.cid(),
                sid,
                pk_d,
                self.keys.clone(),
                self.cfg.party_timer(),
            ));
            if has(active, &Action::EarlyDelivered) {
                self.delivered_sent = true;
                out.push(Outbound::call(Call::Delivered));
            }
        }
        if has(active, &Action::SybilReceipts) {
            let n = self.cfg.n;
            out.push(Outbound::to_party(
                PartyId::Deliverer,
                Message::Receipt(Receipt::sign(&self.keys, self.sid_with(&pk_d), n, &pk_d)),
            ));
            if self.cfg.mode == Mode::Stream {
                out.push(Outbound::to_party(
                    PartyId::Provider,
                    Message::Receipt(Receipt::sign(&self.keys, self.sid_with(&pk_p), n, &pk_p)),
                ));
            }
        }
        out
    }

    fn on_mtree(&mut self, now: u64, leaves: &[Digest], sig: &Signature) -> Vec<Outbound> {
        if self.mt.is_some() || self.stage != Stage::Active {
            return vec![];
        }
        let pk_p = self.pk_p.expect("started");
        let tree = MerkleTree::from_leaves(leaves.to_vec()).ok();
        let ok = leaves.len() as u64 == self.cfg.n
            && pk_p.verify(&mtree_message(&self.cid(), leaves), sig)
            && tree.as_ref().is_some_and(|t| Some(t.root()) == self.root);
        if !ok {
            // No receipt is ever issued; the contract refunds by timeout.
            self.finish();
            return vec![];
        }
        self.mt = tree;
        if let Some(r) = &mut self.receiver {
            r.activate(now);
            self.deadline = None;
        } else {
            self.deadline = Some(now + self.cfg.party_timer());
        }
        let mut out = Vec::new();
        for c in std::mem::take(&mut self.buffered) {
            out.extend(self.on_deliver(now, c));
        }
        out
    }

    fn on_deliver(&mut self, now: u64, chunk: SignedChunk) -> Vec<Outbound> {
        if self.stage != Stage::Active {
            return vec![];
        }
        if self.mt.is_none() {
            self.buffered.push(chunk);
            return vec![];
        }
        match self.cfg.mode {
            Mode::Download => {
                let Some(r) = &mut self.receiver else { return vec![] };
                let mut out = Vec::new();
                if let Some(receipt) = r.on_deliver(now, &chunk) {
                    out.push(Outbound::to_party(PartyId::Deliverer, Message::Receipt(receipt)));
                }
                out.extend(self.maybe_delivered());
                out
            }
            Mode::Stream => {
                let st = &mut self.stream;
                if st.ended {
                    return vec![];
                }
                let pk_p = self.pk_p.expect("started");
                let ok = st.pending.is_none() && chunk.index == st.x + 1 && chunk.is_valid(&pk_p, &self.cid());
                if !ok {
                    return self.end_stream();
                }
                let index = chunk.index;
                self.stream.pending = Some(chunk);
                let sid = self.sid_with(&pk_p);
                let sig = self.keys.sign(&key_request_message(&sid, index, &self.keys.public()));
                self.deadline = Some(now + self.cfg.party_timer());
                vec![Outbound::to_party(PartyId::Provider, Message::KeyReq { index, sig })]
            }
        }
    }

    fn maybe_delivered(&mut self) -> Vec<Outbound> {
        let done = self.receiver.as_ref().is_some_and(VfdReceiver::halted);
        if done && !self.delivered_sent {
            self.delivered_sent = true;
            self.deadline = None;
            vec![Outbound::call(Call::Delivered)]
        } else {
            vec![]
        }
    }

    /// Leaves the streaming loop and asks the contract to settle.
    fn end_stream(&mut self) -> Vec<Outbound> {
        if self.stream.ended {
            return vec![];
        }
        self.stream.ended = true;
        self.deadline = None;
        vec![Outbound::call(Call::Received)]
    }

    fn on_reveal(&mut self, now: u64, index: u64, key: SymKey, sig: &Signature, active: &[Action]) -> Vec<Outbound> {
        if self.stage != Stage::Active || self.cfg.mode != Mode::Stream || self.stream.ended {
            return vec![];
        }
        let pk_p = self.pk_p.expect("started");
        let pk_d = self.pk_d.expect("joined");
        let sid_p = self.sid_with(&pk_p);
        let Some(chunk) = self.stream.pending.clone() else { return self.end_stream() };
        if chunk.index != index || !pk_p.verify(&key_reveal_message(&sid_p, index, &key), sig) {
            return self.end_stream();
        }
        let mt = self.mt.as_ref().expect("tree verified");
        let leaf = mt.leaf(index).expect("index within range");
        let plain = sym_decrypt(&key, &chunk.ciphertext).ok();
        let good = plain.as_ref().is_some_and(|m| hash(m) == leaf);
        if !good || has(active, &Action::FalsePom) {
            let pom = PomStream {
                i: index,
                chunk,
                key,
                key_sig: *sig,
                leaf,
                mtp: mt.gen_proof(index).expect("index within range"),
            };
            self.stream.ended = true;
            self.disputed = Some("pom_stream");
            self.deadline = None;
            return vec![Outbound::call(Call::PomStream(Box::new(pom)))];
        }
        self.stream.pending = None;
        self.stream.x = index;
        self.output.insert(index, plain.expect("checked"));
        self.decrypted_at.insert(index, now);
        let sid_d = self.sid_with(&pk_d);
        let mut out = vec![
            Outbound::to_party(PartyId::Deliverer, Message::Receipt(Receipt::sign(&self.keys, sid_d, index, &pk_d))),
            Outbound::to_party(PartyId::Provider, Message::Receipt(Receipt::sign(&self.keys, sid_p, index, &pk_p))),
        ];
        if index == self.cfg.n {
            out.extend(self.end_stream());
        } else {
            self.deadline = Some(now + self.cfg.party_timer());
        }
        out
    }

    /// Checks the reveal, recovers keys, decrypts, and either outputs the
    /// content or files a complaint.
    fn on_revealed(&mut self, now: u64, erk: &EncryptedRevealSet, active: &[Action]) -> Vec<Outbound> {
        let n = self.cfg.n;
        let ctr = self.ctr;
        if has(active, &Action::FalseWrongRk) || !validate_rkeys(n, ctr, &erk.positions()) {
            self.disputed = Some("wrong_rk");
            self.finish();
            return vec![Outbound::call(Call::WrongRk)];
        }
        let accepted: Vec<SignedChunk> = self.receiver.as_ref().map(|r| r.accepted().to_vec()).unwrap_or_default();
        let Some(mt) = self.mt.clone() else {
            self.finish();
            return vec![];
        };
        // Decrypt each element; an undecodable one is itself evidence.
        let mut rk = RevealSet::default();
        for (j, e) in erk.elements.iter().enumerate() {
            match decode_from_group(&vdec(self.vpke.secret(), &e.ciphertext)) {
                Ok(v) => rk.elements.push(RevealedKey { position: e.position, value: SymKey(v) }),
                Err(_) => {
                    let first = subtree_leaves(n, e.position).map(|(l, _)| l + 2 - n).unwrap_or(1);
                    return self.file_pom(first, j, &accepted, &mt, erk);
                }
            }
        }
        let mut bad = None;
        for i in 1..=ctr.min(accepted.len() as u64) {
            let j = covering_element(&rk, n, i).expect("validated cover");
            let key = recover_chunk_key(i, j, n, &rk).expect("covered");
            let c = &accepted[(i - 1) as usize];
            match sym_decrypt(&key, &c.ciphertext) {
                Ok(m) if hash(&m) == mt.leaf(i).expect("in range") => {
                    self.output.insert(i, m);
                    self.decrypted_at.insert(i, now);
                }
                _ => {
                    bad = Some((i, j));
                    break;
                }
            }
        }
        if bad.is_none() && has(active, &Action::FalsePom) && ctr >= 1 && !accepted.is_empty() {
            bad = covering_element(&rk, n, 1).map(|j| (1, j));
        }
        match bad {
            Some((i, j)) => {
                self.output.clear();
                self.decrypted_at.clear();
                self.file_pom(i, j, &accepted, &mt, erk)
            }
            None => {
                self.finish();
                vec![]
            }
        }
    }

    fn file_pom(
        &mut self,
        i: u64,
        j: usize,
        accepted: &[SignedChunk],
        mt: &MerkleTree,
        erk: &EncryptedRevealSet,
    ) -> Vec<Outbound> {
        self.finish();
        let Some(chunk) = accepted.get((i - 1) as usize).cloned() else { return vec![] };
        let (rk_element, proof) = prove_pke(&self.vpke, &erk.elements[j].ciphertext, &mut self.rng);
        let pom = PomDownload {
            i,
            j: j as u64,
            chunk,
            leaf: mt.leaf(i).expect("in range"),
            mtp: mt.gen_proof(i).expect("in range"),
            rk_element,
            erk: erk.clone(),
            proof,
        };
        self.disputed = Some("pom_download");
        vec![Outbound::call(Call::PomDownload(Box::new(pom)))]
    }

    fn on_event(&mut self, now: u64, ev: &Event, active: &[Action]) -> Vec<Outbound> {
        match ev {
            Event::Started { pk_p, root, .. } => {
                self.pk_p = Some(*pk_p);
                self.root = Some(*root);
                vec![]
            }
            Event::Joined { pk_d } => {
                self.pk_d = Some(*pk_d);
                vec![]
            }
            Event::Ready => {
                self.ready_seen += 1;
                if self.stage == Stage::Waiting && self.ready_seen == self.index + 1 {
                    self.stage = Stage::Requested;
                    let vpk_c = (self.cfg.mode == Mode::Download).then(|| self.vpke.public());
                    return vec![Outbound::call(Call::Consume { pk_c: self.keys.public(), vpk_c })];
                }
                vec![]
            }
            Event::Initiated { consumer, .. } if *consumer == self.id && self.stage == Stage::Requested => {
                self.on_initiated(now, active)
            }
            Event::Revealing { ctr } if self.stage == Stage::Active => {
                self.ctr = *ctr;
                vec![]
            }
            Event::Revealed { erk } if self.stage == Stage::Active => self.on_revealed(now, erk, active),
            Event::Received if self.stage == Stage::Active => {
                self.stream.ended = true;
                self.finish();
                vec![]
            }
            Event::Sold | Event::NotSold if self.stage == Stage::Active => {
                self.finish();
                vec![]
            }
            Event::Withdrawn { .. } if self.stage != Stage::Active => {
                self.finish();
                vec![]
            }
            _ => vec![],
        }
    }
}

/// Index of the reveal element whose subtree holds chunk `i`.
fn covering_element(rk: &RevealSet, n: u64, i: u64) -> Option<usize> {
    let leaf = n + i - 2;
    rk.elements
        .iter()
        .position(|e| subtree_leaves(n, e.position).is_some_and(|(l, r)| (l..=r).contains(&leaf)))
}

impl Party for Consumer {
    fn id(&self) -> PartyId {
        self.id
    }

    fn on_message(&mut self, now: u64, from: Endpoint, msg: &Message, active: &[Action]) -> Vec<Outbound> {
        if self.stage == Stage::Done {
            return vec![];
        }
        match (from, msg) {
            (Endpoint::Contract, Message::Event(ev)) => self.on_event(now, ev, active),
            (Endpoint::Party(PartyId::Provider), Message::MTree { leaves, sig }) => self.on_mtree(now, leaves, sig),
            (Endpoint::Party(PartyId::Deliverer), Message::Deliver(c)) => self.on_deliver(now, c.clone()),
            (Endpoint::Party(PartyId::Provider), Message::Reveal { index, key, sig }) => {
                self.on_reveal(now, *index, *key, sig, active)
            }
            _ => vec![],
        }
    }

    fn on_tick(&mut self, now: u64, _active: &[Action]) -> Vec<Outbound> {
        if self.stage != Stage::Active {
            return vec![];
        }
        match self.cfg.mode {
            Mode::Download => {
                if let Some(r) = &mut self.receiver {
                    r.on_tick(now);
                }
                if self.mt.is_none() && self.deadline.is_some_and(|d| now >= d) {
                    self.finish();
                    return vec![];
                }
                self.maybe_delivered()
            }
            Mode::Stream => {
                if self.deadline.is_some_and(|d| now >= d) {
                    if self.mt.is_none() {
                        self.finish();
                        return vec![];
                    }
                    return self.end_stream();
                }
                vec![]
            }
        }
    }

    fn next_deadline(&self) -> Option<u64> {
        if self.stage != Stage::Active {
            return None;
        }
        let r = self.receiver.as_ref().and_then(VfdReceiver::next_deadline);
        match (r, self.deadline) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn halted(&self) -> bool {
        self.stage == Stage::Done
    }
}
