//! Deterministic synchronous-round scheduler.
//!
//! Each round runs in a fixed order: the contract first processes the
//! calls due this round and fires its deadlines, then the provider, the
//! deliverer and the consumers (by index) drain their inboxes and tick.
//! Anything sent in round `r` arrives at `r + 1`, or up to `r + Δ` when the
//! adversary stretches delays. Contract events reach every party.

pub mod codec;
pub mod footprint;
mod invariants;
pub mod vfd_lab;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbiter::{AcceptedCall, Contract, Event, Fault, Ledger, PartyId, Phase, SessionRecord};
use crate::crypto::{self, hash_parts, sym_decrypt, SigKeyPair, SymKey, VpkeKeyPair};
use crate::keytree::recover_from_node;
use crate::protocols::{
    pad_content, Action, Behavior, ConfigError, Consumer, Deliverer, Endpoint, Message, Outbound, Party, Provider,
    Role, Rule, SessionConfig,
};

pub use invariants::{check_invariants, Verdict};

/// Version tag written into transcript headers.
pub const TRANSCRIPT_SCHEMA: &str = "fairdeliver-transcript/1";
/// Intra-round processing order, recorded in transcript headers.
pub const ROUND_ORDER: [&str; 4] = ["contract", "provider", "deliverer", "consumers"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0} corrupted roles; at most two are allowed")]
    TooManyCorrupted(usize),
    #[error("content pads to {padded} chunks but the configuration says {n}")]
    ContentMismatch { n: u64, padded: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarySpec {
    #[serde(default)]
    pub rules: Vec<Rule>,
    /// Stretch every envelope in the network to the full delay bound.
    #[serde(default)]
    pub delay_all: bool,
}

impl AdversarySpec {
    pub fn corrupted(&self) -> BTreeSet<Role> {
        self.rules.iter().map(|r| r.party).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub config: SessionConfig,
    /// Number of consumers; defaults to one per session.
    pub consumers: Option<u32>,
    #[serde(default)]
    pub adversary: AdversarySpec,
    pub seed: u64,
    /// Raw content length in bytes; defaults to `n * eta`.
    pub content_len: Option<usize>,
    #[serde(skip)]
    pub fault: Fault,
}

impl Scenario {
    pub fn honest(name: &str, config: SessionConfig, seed: u64) -> Self {
        Scenario {
            name: name.to_string(),
            config,
            consumers: None,
            adversary: AdversarySpec::default(),
            seed,
            content_len: None,
            fault: Fault::None,
        }
    }

    pub fn with_rules(mut self, rules: Vec<Rule>) -> Self {
        self.adversary.rules = rules;
        self
    }

    pub fn consumer_count(&self) -> u32 {
        self.consumers.unwrap_or(self.config.theta as u32)
    }

    /// Hard stop for a run.
    pub fn round_cap(&self) -> u64 {
        (16 * self.config.n + 64) * self.config.delta * self.config.theta
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    pub from: String,
    pub to: String,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    pub bytes: usize,
    pub sent: u64,
    pub at: u64,
    pub dropped: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CallRecord {
    pub from: PartyId,
    pub call: &'static str,
    pub bytes: usize,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<CallRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<&'static str>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub messages: Vec<MessageRecord>,
    /// Balances after the contract step, present when they changed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balances: Option<BTreeMap<PartyId, u64>>,
    pub escrow: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PartyStats {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub messages_sent: u64,
    pub received_kinds: BTreeSet<String>,
    pub halted_at: Option<u64>,
    pub aborted: bool,
    pub corrupted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConsumerReport {
    pub id: PartyId,
    pub initial: u64,
    pub final_balance: u64,
    /// Output chunks that match the content.
    pub correct_chunks: u64,
    pub output_chunks: u64,
    pub decrypted_at: BTreeMap<u64, u64>,
    pub disputed: Option<&'static str>,
    /// Chunks the adversary could decrypt through this consumer, if corrupted.
    pub adversary_learned: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Transcript {
    pub scenario: Scenario,
    pub rounds: Vec<RoundRecord>,
    pub parties: BTreeMap<PartyId, PartyStats>,
    pub sessions: Vec<SessionRecord>,
    pub accepted_calls: Vec<AcceptedCall>,
    pub consumers: Vec<ConsumerReport>,
    /// Deliver messages sent by the deliverer per session nonce.
    pub delivers_per_session: BTreeMap<u64, u64>,
    pub initial_balances: BTreeMap<PartyId, u64>,
    pub final_balances: BTreeMap<PartyId, u64>,
    pub residual_escrow: u64,
    pub final_phase: Phase,
    pub end_round: u64,
    pub quiescent: bool,
    pub conserved: bool,
    pub first_conservation_violation: Option<u64>,
    pub padded_chunks: u64,
    pub effective_chunks: u64,
}

impl Transcript {
    pub fn balance_delta(&self, p: PartyId) -> i128 {
        let f = self.final_balances.get(&p).copied().unwrap_or(0) as i128;
        let i = self.initial_balances.get(&p).copied().unwrap_or(0) as i128;
        f - i
    }

    /// Every message record in order.
    pub fn messages(&self) -> impl Iterator<Item = &MessageRecord> {
        self.rounds.iter().flat_map(|r| r.messages.iter())
    }

    /// Contract-accepted bytes, split by session nonce (`None` for setup).
    pub fn onchain_bytes(&self) -> BTreeMap<Option<u64>, u64> {
        let mut m = BTreeMap::new();
        for c in &self.accepted_calls {
            *m.entry(c.session).or_insert(0) += c.bytes as u64;
        }
        m
    }

    /// Line-delimited JSON: header, one line per recorded round, summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "type": "header",
            "schema": TRANSCRIPT_SCHEMA,
            "hash": crypto::HASH_ID,
            "signature": crypto::SIGNATURE_ID,
            "group": crypto::GROUP_ID,
            "round_order": ROUND_ORDER,
            "scenario": self.scenario,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for r in &self.rounds {
            let mut v = serde_json::to_value(r).expect("round serializes");
            v["type"] = "round".into();
            out.push_str(&v.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "type": "summary",
            "parties": self.parties,
            "sessions": self.sessions,
            "accepted_calls": self.accepted_calls,
            "consumers": self.consumers,
            "delivers_per_session": self.delivers_per_session,
            "initial_balances": self.initial_balances,
            "final_balances": self.final_balances,
            "residual_escrow": self.residual_escrow,
            "final_phase": self.final_phase,
            "end_round": self.end_round,
            "quiescent": self.quiescent,
            "conserved": self.conserved,
            "first_conservation_violation": self.first_conservation_violation,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

struct Envelope {
    seq: u64,
    from: Endpoint,
    to: Endpoint,
    msg: Message,
    bytes: usize,
}

fn endpoint_name(e: Endpoint) -> String {
    match e {
        Endpoint::Party(p) => p.to_string(),
        Endpoint::Contract => "contract".to_string(),
    }
}

/// Per-consumer material the adversary can combine when the consumer is corrupted.
#[derive(Default)]
struct Exposure {
    keys: BTreeMap<u64, Vec<SymKey>>,
    ciphertexts: BTreeMap<u64, Vec<Vec<u8>>>,
}

impl Exposure {
    fn add_key(&mut self, i: u64, k: SymKey) {
        let v = self.keys.entry(i).or_default();
        if !v.contains(&k) {
            v.push(k);
        }
    }

    fn add_ct(&mut self, i: u64, ct: &[u8]) {
        let v = self.ciphertexts.entry(i).or_default();
        if !v.iter().any(|c| c == ct) {
            v.push(ct.to_vec());
        }
    }

    fn learned(&self, content: &[Vec<u8>]) -> u64 {
        (1..=content.len() as u64)
            .filter(|i| {
                let want = &content[(*i - 1) as usize];
                let (Some(ks), Some(cs)) = (self.keys.get(i), self.ciphertexts.get(i)) else { return false };
                ks.iter().any(|k| cs.iter().any(|c| sym_decrypt(k, c).is_ok_and(|p| &p == want)))
            })
            .count() as u64
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    cfg: SessionConfig,
    content: Arc<Vec<Vec<u8>>>,
    contract: Contract,
    ledger: Ledger,
    provider: Provider,
    deliverer: Deliverer,
    consumers: Vec<Consumer>,
    behaviors: BTreeMap<PartyId, Behavior>,
    stats: BTreeMap<PartyId, PartyStats>,
    pending: BTreeMap<u64, Vec<Envelope>>,
    seq: u64,
    rounds: Vec<RoundRecord>,
    exposure: BTreeMap<u32, Exposure>,
    sell_seen_by_deliverer: Option<Arc<[crate::vfd::SignedChunk]>>,
    delivers_per_session: BTreeMap<u64, u64>,
    last_balances: BTreeMap<PartyId, u64>,
    last_activity: u64,
    first_violation: Option<u64>,
}

impl Sim<'_> {
    fn party_ids(&self) -> Vec<PartyId> {
        let mut v = vec![PartyId::Provider, PartyId::Deliverer];
        v.extend((0..self.consumers.len() as u32).map(PartyId::Consumer));
        v
    }

    fn party(&mut self, id: PartyId) -> &mut dyn Party {
        match id {
            PartyId::Provider => &mut self.provider,
            PartyId::Deliverer => &mut self.deliverer,
            PartyId::Consumer(k) => &mut self.consumers[k as usize],
        }
    }

    fn party_ref(&self, id: PartyId) -> &dyn Party {
        match id {
            PartyId::Provider => &self.provider,
            PartyId::Deliverer => &self.deliverer,
            PartyId::Consumer(k) => &self.consumers[k as usize],
        }
    }

    fn corrupted(&self, id: PartyId) -> bool {
        self.behaviors.get(&id).is_some_and(Behavior::is_corrupted)
    }

    fn delay(&self, active: &[Action]) -> u64 {
        if self.sc.adversary.delay_all || active.contains(&Action::DelayToMax) {
            self.cfg.delta
        } else {
            1
        }
    }

    fn enqueue(&mut self, now: u64, from: Endpoint, out: Outbound, delay: u64, record: &mut RoundRecord) {
        let bytes = codec::encoded_len(&out.msg);
        let at = now + delay;
        record.messages.push(MessageRecord {
            from: endpoint_name(from),
            to: endpoint_name(out.to),
            kind: out.msg.kind(),
            index: out.msg.index(),
            bytes,
            sent: now,
            at,
            dropped: false,
        });
        if let Endpoint::Party(p) = from {
            let st = self.stats.get_mut(&p).expect("known party");
            st.bytes_sent += bytes as u64;
            st.messages_sent += 1;
            if p == PartyId::Deliverer && matches!(out.msg, Message::Deliver(_)) {
                *self.delivers_per_session.entry(self.contract.nonce()).or_insert(0) += 1;
            }
        }
        self.seq += 1;
        self.pending
            .entry(at)
            .or_default()
            .push(Envelope { seq: self.seq, from, to: out.to, msg: out.msg, bytes });
    }

    fn record_drop(&mut self, now: u64, from: PartyId, out: &Outbound, record: &mut RoundRecord) {
        record.messages.push(MessageRecord {
            from: from.to_string(),
            to: endpoint_name(out.to),
            kind: out.msg.kind(),
            index: out.msg.index(),
            bytes: codec::encoded_len(&out.msg),
            sent: now,
            at: now,
            dropped: true,
        });
    }

    fn expose_revealed(&mut self, ev: &Event) {
        let Event::Revealed { erk } = ev else { return };
        let Some(PartyId::Consumer(k)) = self.contract.consumer() else { return };
        if !self.corrupted(PartyId::Consumer(k)) {
            return;
        }
        let n = self.cfg.n;
        let vpke = self.consumers[k as usize].vpke().clone();
        let exp = self.exposure.entry(k).or_default();
        for e in &erk.elements {
            let m = crypto::vdec(vpke.secret(), &e.ciphertext);
            let Ok(y) = crypto::decode_from_group(&m) else { continue };
            for i in 1..=n {
                if let Some(key) = recover_from_node(i, n, e.position, SymKey(y)) {
                    exp.add_key(i, key);
                }
            }
        }
    }

    fn contract_step(&mut self, now: u64, record: &mut RoundRecord) {
        let mut due: Vec<Envelope> = Vec::new();
        if let Some(list) = self.pending.get_mut(&now) {
            let (mine, rest): (Vec<_>, Vec<_>) = list.drain(..).partition(|e| e.to == Endpoint::Contract);
            *list = rest;
            due = mine;
        }
        due.sort_by_key(|e| e.seq);
        let mut events = Vec::new();
        for env in due {
            let Endpoint::Party(from) = env.from else { continue };
            let Message::Call(call) = &env.msg else { continue };
            match self.contract.handle(&mut self.ledger, now, from, call, env.bytes) {
                Ok(evs) => {
                    record.calls.push(CallRecord { from, call: call.name(), bytes: env.bytes, accepted: true, reason: None });
                    for ev in &evs {
                        self.expose_revealed(ev);
                    }
                    events.extend(evs);
                }
                Err(e) => record.calls.push(CallRecord {
                    from,
                    call: call.name(),
                    bytes: env.bytes,
                    accepted: false,
                    reason: Some(e.to_string()),
                }),
            }
        }
        let ticked = self.contract.tick(&mut self.ledger, now);
        for ev in &ticked {
            self.expose_revealed(ev);
        }
        events.extend(ticked);
        if !self.ledger.conserved() && self.first_violation.is_none() {
            self.first_violation = Some(now);
        }
        let delay = if self.sc.adversary.delay_all { self.cfg.delta } else { 1 };
        for ev in events {
            record.events.push(ev.name());
            for p in self.party_ids() {
                let out = Outbound { to: Endpoint::Party(p), msg: Message::Event(ev.clone()) };
                self.enqueue(now, Endpoint::Contract, out, delay, record);
            }
        }
        record.escrow = self.ledger.escrow();
        if self.ledger.balances() != &self.last_balances {
            self.last_balances = self.ledger.balances().clone();
            record.balances = Some(self.last_balances.clone());
        }
    }

    fn filter_outbound(&mut self, now: u64, id: PartyId, out: Vec<Outbound>, active: &[Action], record: &mut RoundRecord) {
        let delay = self.delay(active);
        for o in out {
            let withheld = active.iter().any(|a| match a {
                Action::Withhold { kind, from_index } => {
                    o.msg.kind() == kind && o.msg.index().unwrap_or(0) >= *from_index
                }
                _ => false,
            });
            if withheld {
                self.record_drop(now, id, &o, record);
            } else {
                self.enqueue(now, Endpoint::Party(id), o, delay, record);
            }
        }
    }

    fn observe_inbound(&mut self, id: PartyId, env: &Envelope) {
        let st = self.stats.get_mut(&id).expect("known party");
        st.bytes_received += env.bytes as u64;
        st.received_kinds.insert(env.msg.kind().to_string());
        if let PartyId::Consumer(k) = id {
            if self.corrupted(id) {
                let exp = self.exposure.entry(k).or_default();
                match &env.msg {
                    Message::Deliver(c) => exp.add_ct(c.index, &c.ciphertext),
                    Message::Reveal { index, key, .. } => exp.add_key(*index, *key),
                    _ => {}
                }
            }
        }
        if id == PartyId::Deliverer {
            if let Message::Sell { chunks } = &env.msg {
                self.sell_seen_by_deliverer.get_or_insert_with(|| chunks.clone());
            }
        }
    }

    fn party_step(&mut self, now: u64, id: PartyId, record: &mut RoundRecord) {
        let mut due: Vec<Envelope> = Vec::new();
        if let Some(list) = self.pending.get_mut(&now) {
            let (mine, rest): (Vec<_>, Vec<_>) = list.drain(..).partition(|e| e.to == Endpoint::Party(id));
            *list = rest;
            due = mine;
        }
        due.sort_by_key(|e| (e.from != Endpoint::Contract, e.seq));
        if !due.is_empty() {
            self.last_activity = now;
        }
        if self.stats[&id].aborted {
            for env in &due {
                self.observe_inbound(id, env);
            }
            return;
        }
        for env in due {
            self.observe_inbound(id, &env);
            let beh = self.behaviors.get_mut(&id).expect("known party");
            beh.observe(env.msg.kind());
            let active = beh.active(now);
            if active.contains(&Action::Abort) {
                self.abort(now, id);
                return;
            }
            let out = self.party(id).on_message(now, env.from, &env.msg, &active);
            self.filter_outbound(now, id, out, &active, record);
        }
        let active = self.behaviors[&id].active(now);
        if active.contains(&Action::Abort) {
            self.abort(now, id);
            return;
        }
        let out = self.party(id).on_tick(now, &active);
        self.filter_outbound(now, id, out, &active, record);
        if self.party_ref(id).halted() {
            let st = self.stats.get_mut(&id).expect("known party");
            st.halted_at.get_or_insert(now);
        }
    }

    fn abort(&mut self, now: u64, id: PartyId) {
        let st = self.stats.get_mut(&id).expect("known party");
        st.aborted = true;
        st.halted_at.get_or_insert(now);
    }

    fn quiescent(&self) -> bool {
        if self.pending.values().any(|v| !v.is_empty()) || self.contract.next_deadline().is_some() {
            return false;
        }
        self.party_ids().into_iter().all(|id| {
            let st = &self.stats[&id];
            st.aborted || self.party_ref(id).halted() || self.party_ref(id).next_deadline().is_none()
        })
    }
}

/// Executes a scenario to quiescence or the round cap.
pub fn run(sc: &Scenario) -> Result<Transcript, SimError> {
    let cfg = sc.config;
    cfg.validate()?;
    let corrupted = sc.adversary.corrupted();
    if corrupted.len() > 2 {
        return Err(SimError::TooManyCorrupted(corrupted.len()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(sc.seed);
    let content_len = sc.content_len.unwrap_or(cfg.n as usize * cfg.eta);
    let mut raw = vec![0u8; content_len];
    rng.fill_bytes(&mut raw);
    let (chunks, info) = pad_content(&raw, cfg.eta)?;
    if info.n != cfg.n {
        return Err(SimError::ContentMismatch { n: cfg.n, padded: info.n });
    }
    let content = Arc::new(chunks);
    let address = hash_parts(&[b"contract", &sc.seed.to_be_bytes()]);

    let p_keys = SigKeyPair::generate(&mut rng);
    let d_keys = SigKeyPair::generate(&mut rng);
    let provider = Provider::new(cfg, p_keys, address, content.clone(), rng.next_u64());
    let deliverer = Deliverer::new(cfg, d_keys, address);
    let consumers: Vec<Consumer> = (0..sc.consumer_count())
        .map(|k| {
            let keys = SigKeyPair::generate(&mut rng);
            let vpke = VpkeKeyPair::generate(&mut rng);
            Consumer::new(k, cfg, keys, vpke, address, rng.next_u64())
        })
        .collect();

    let b = cfg.prices;
    let mut initial = vec![(PartyId::Provider, cfg.theta * (cfg.n * b.b_p + b.b_pf)), (PartyId::Deliverer, 0)];
    initial.extend((0..consumers.len() as u32).map(|k| (PartyId::Consumer(k), cfg.n * b.b_c)));
    let ledger = Ledger::new(initial.clone());
    let mut contract = Contract::new(cfg.mode, address, cfg.contract_timers());
    contract.fault = sc.fault;

    let mut sim = Sim {
        sc,
        cfg,
        content: content.clone(),
        contract,
        last_balances: ledger.balances().clone(),
        ledger,
        provider,
        deliverer,
        consumers,
        behaviors: BTreeMap::new(),
        stats: BTreeMap::new(),
        pending: BTreeMap::new(),
        seq: 0,
        rounds: Vec::new(),
        exposure: BTreeMap::new(),
        sell_seen_by_deliverer: None,
        delivers_per_session: BTreeMap::new(),
        last_activity: 0,
        first_violation: None,
    };
    for id in sim.party_ids() {
        let beh = Behavior::for_party(&sc.adversary.rules, id);
        sim.stats.insert(id, PartyStats { corrupted: beh.is_corrupted(), ..Default::default() });
        sim.behaviors.insert(id, beh);
    }

    let cap = sc.round_cap();
    let mut now = 0;
    let mut quiescent = false;
    while now <= cap {
        let mut record = RoundRecord {
            round: now,
            calls: vec![],
            events: vec![],
            messages: vec![],
            balances: None,
            escrow: 0,
        };
        sim.contract_step(now, &mut record);
        for id in sim.party_ids() {
            sim.party_step(now, id, &mut record);
        }
        if !record.calls.is_empty() || !record.events.is_empty() || !record.messages.is_empty() {
            sim.last_activity = now;
        }
        let interesting = !record.calls.is_empty()
            || !record.events.is_empty()
            || !record.messages.is_empty()
            || record.balances.is_some();
        if interesting {
            sim.rounds.push(record);
        }
        if sim.quiescent() {
            quiescent = true;
            break;
        }
        now += 1;
    }

    Ok(finish(sim, initial, info.effective_chunks, quiescent))
}

fn finish(sim: Sim<'_>, initial: Vec<(PartyId, u64)>, effective: u64, quiescent: bool) -> Transcript {
    let d_corrupted = sim.corrupted(PartyId::Deliverer);
    let mut consumers = Vec::new();
    let mut exposure = sim.exposure;
    for (k, c) in sim.consumers.iter().enumerate() {
        let id = PartyId::Consumer(k as u32);
        let correct = c
            .output()
            .iter()
            .filter(|(i, p)| sim.content.get((**i as usize).wrapping_sub(1)).is_some_and(|want| want == *p))
            .count() as u64;
        let learned = if sim.behaviors[&id].is_corrupted() {
            let exp = exposure.entry(k as u32).or_default();
            if d_corrupted {
                if let Some(chunks) = &sim.sell_seen_by_deliverer {
                    for ch in chunks.iter() {
                        exp.add_ct(ch.index, &ch.ciphertext);
                    }
                }
            }
            exp.learned(&sim.content)
        } else {
            0
        };
        consumers.push(ConsumerReport {
            id,
            initial: initial.iter().find(|(p, _)| *p == id).map_or(0, |(_, v)| *v),
            final_balance: sim.ledger.balance(id),
            correct_chunks: correct,
            output_chunks: c.output().len() as u64,
            decrypted_at: c.decrypted_at().clone(),
            disputed: c.disputed(),
            adversary_learned: learned,
        });
    }
    Transcript {
        scenario: sim.sc.clone(),
        rounds: sim.rounds,
        parties: sim.stats,
        sessions: sim.contract.sessions().to_vec(),
        accepted_calls: sim.contract.accepted_calls().to_vec(),
        consumers,
        delivers_per_session: sim.delivers_per_session,
        initial_balances: initial.into_iter().collect(),
        final_balances: sim.ledger.balances().clone(),
        residual_escrow: sim.ledger.escrow(),
        final_phase: sim.contract.phase(),
        end_round: sim.last_activity,
        quiescent,
        conserved: sim.first_violation.is_none(),
        first_conservation_violation: sim.first_violation,
        padded_chunks: sim.cfg.n,
        effective_chunks: effective,
    }
}
