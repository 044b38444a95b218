//! Party state machines for the downloading and streaming protocols.
//!
//! Every machine is a step function driven by the scheduler: it reacts to
//! one inbound message or one round tick at a time and returns the
//! messages it wants sent. Misbehavior is injected through [`Action`]s
//! that the scheduler activates per party.

mod consumer;
mod deliverer;
mod provider;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbiter::{Call, ContractTimers, Event, Mode, PartyId, Prices};
use crate::crypto::{Digest, Signature, SymKey};
use crate::vfd::{Receipt, SignedChunk};

pub use consumer::Consumer;
pub use deliverer::Deliverer;
pub use provider::{prepare_chunks, Provider};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("chunk count {0} is not a power of two")]
    ChunkCount(u64),
    #[error("chunk size {0} is not a positive multiple of 32 bytes")]
    ChunkSize(usize),
    #[error("consumer price {b_c} must exceed deliverer price {b_p}")]
    Prices { b_p: u64, b_c: u64 },
    #[error("at least one session is required")]
    Sessions,
    #[error("network delay bound must be at least one round")]
    Delta,
    #[error("content is empty")]
    EmptyContent,
    #[error("timer `{0}` must be positive")]
    Timer(&'static str),
}

/// Timer durations in rounds before scaling by the delay bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerConfig {
    pub deliver: u64,
    pub dispute: u64,
    pub receive: u64,
    pub finish: u64,
    /// Per-message wait inside the off-chain loops.
    pub party: u64,
}

impl TimerConfig {
    pub fn defaults(n: u64) -> Self {
        TimerConfig { deliver: 2 * n + 6, dispute: 8, receive: 4 * n + 8, finish: 4 * n + 16, party: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    pub n: u64,
    /// Chunk size in bytes.
    pub eta: usize,
    pub prices: Prices,
    pub theta: u64,
    /// Network delay bound in rounds.
    pub delta: u64,
    pub timers: TimerConfig,
}

impl SessionConfig {
    /// Defaults: prices 10/25, penalty `n * B_C / 4`, one session, delay 1.
    pub fn new(mode: Mode, n: u64, eta: usize) -> Self {
        SessionConfig {
            mode,
            n,
            eta,
            prices: Prices::with_default_penalty(n, 10, 25),
            theta: 1,
            delta: 1,
            timers: TimerConfig::defaults(n),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 || !self.n.is_power_of_two() {
            return Err(ConfigError::ChunkCount(self.n));
        }
        if self.eta == 0 || !self.eta.is_multiple_of(32) {
            return Err(ConfigError::ChunkSize(self.eta));
        }
        if self.prices.b_c <= self.prices.b_p {
            return Err(ConfigError::Prices { b_p: self.prices.b_p, b_c: self.prices.b_c });
        }
        if self.theta == 0 {
            return Err(ConfigError::Sessions);
        }
        if self.delta == 0 {
            return Err(ConfigError::Delta);
        }
        let t = &self.timers;
        for (name, v) in [
            ("deliver", t.deliver),
            ("dispute", t.dispute),
            ("receive", t.receive),
            ("finish", t.finish),
            ("party", t.party),
        ] {
            if v == 0 {
                return Err(ConfigError::Timer(name));
            }
        }
        Ok(())
    }

    pub fn contract_timers(&self) -> ContractTimers {
        let d = self.delta;
        let t = &self.timers;
        ContractTimers {
            deliver: t.deliver * d,
            dispute: t.dispute * d,
            receive: t.receive * d,
            finish: t.finish * d,
            proof_wait: t.party * d,
        }
    }

    /// One-hop request/response wait.
    pub fn party_timer(&self) -> u64 {
        self.timers.party * self.delta
    }

    /// Wait for the two-hop cycle deliver, key request, reveal, receipt.
    pub fn stream_cycle_timer(&self) -> u64 {
        2 * self.party_timer()
    }

    /// How long the provider waits for setup steps and idle sessions.
    pub fn setup_timer(&self) -> u64 {
        4 * self.party_timer()
    }
}

/// Result of [`pad_content`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PadInfo {
    pub original_len: usize,
    /// Chunks holding at least one content byte.
    pub effective_chunks: u64,
    pub n: u64,
}

/// Zero-pads `raw` to whole chunks of `eta` bytes, then appends zero
/// chunks up to the next power of two.
pub fn pad_content(raw: &[u8], eta: usize) -> Result<(Vec<Vec<u8>>, PadInfo), ConfigError> {
    if eta == 0 || !eta.is_multiple_of(32) {
        return Err(ConfigError::ChunkSize(eta));
    }
    if raw.is_empty() {
        return Err(ConfigError::EmptyContent);
    }
    let effective = raw.len().div_ceil(eta);
    let n = effective.next_power_of_two();
    let mut chunks: Vec<Vec<u8>> = raw
        .chunks(eta)
        .map(|c| {
            let mut v = c.to_vec();
            v.resize(eta, 0);
            v
        })
        .collect();
    chunks.resize(n, vec![0; eta]);
    let info = PadInfo { original_len: raw.len(), effective_chunks: effective as u64, n: n as u64 };
    Ok((chunks, info))
}

/// Message source or destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Party(PartyId),
    Contract,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    /// Provider hands the signed ciphertexts to the deliverer.
    Sell { chunks: Arc<[SignedChunk]> },
    /// Provider sends the signed leaf digests to the consumer.
    MTree { leaves: Vec<Digest>, sig: Signature },
    Deliver(SignedChunk),
    Receipt(Receipt),
    KeyReq { index: u64, sig: Signature },
    Reveal { index: u64, key: SymKey, sig: Signature },
    Call(Call),
    Event(Event),
}

impl Message {
    /// Stable kind name used by adversary rules, the codec and reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Sell { .. } => "sell",
            Message::MTree { .. } => "mtree",
            Message::Deliver(_) => "deliver",
            Message::Receipt(_) => "receipt",
            Message::KeyReq { .. } => "key_req",
            Message::Reveal { .. } => "reveal",
            Message::Call(c) => c.name(),
            Message::Event(e) => e.name(),
        }
    }

    /// Chunk index carried by per-chunk messages.
    pub fn index(&self) -> Option<u64> {
        match self {
            Message::Deliver(c) => Some(c.index),
            Message::Receipt(r) => Some(r.index),
            Message::KeyReq { index, .. } | Message::Reveal { index, .. } => Some(*index),
            Message::Call(Call::ClaimDelivery { receipt } | Call::ClaimRevealing { receipt }) => {
                Some(receipt.index)
            }
            Message::Call(Call::VfdProof { receipt }) => Some(receipt.map_or(0, |r| r.index)),
            Message::Call(Call::PomDownload(p)) => Some(p.i),
            Message::Call(Call::PomStream(p)) => Some(p.i),
            _ => None,
        }
    }
}

/// Kind names of off-chain messages that carry key material.
pub const KEY_BEARING_KINDS: &[&str] = &["reveal"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outbound {
    pub to: Endpoint,
    pub msg: Message,
}

impl Outbound {
    pub fn to_party(p: PartyId, msg: Message) -> Self {
        Outbound { to: Endpoint::Party(p), msg }
    }

    pub fn call(call: Call) -> Self {
        Outbound { to: Endpoint::Contract, msg: Message::Call(call) }
    }
}

/// Party role in adversary rules; `C` applies to every consumer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    P,
    D,
    C,
}

impl Role {
    pub fn of(p: PartyId) -> Role {
        match p {
            PartyId::Provider => Role::P,
            PartyId::Deliverer => Role::D,
            PartyId::Consumer(_) => Role::C,
        }
    }
}

/// Deviations a corrupted party can be programmed with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Stop participating entirely.
    Abort,
    /// Drop outgoing messages of `kind` whose chunk index is at least `from_index`.
    Withhold {
        kind: String,
        #[serde(default)]
        from_index: u64,
    },
    /// Hold every outgoing envelope for the full delay bound.
    DelayToMax,
    /// Provider encrypts random bytes in place of chunk `index`.
    GarbageChunk { index: u64 },
    /// Provider encrypts chunk `index` under a key outside the key tree.
    WrongChunkKey { index: u64 },
    /// Provider reveals a wrong key for chunk `index`.
    WrongRevealKey { index: u64 },
    /// Provider reveals a cover one chunk short.
    ShortReveal,
    /// Provider signs a Merkle tree that does not match the committed root.
    ForgedMerkleTree,
    /// Deliverer flips a ciphertext byte of chunk `index` on the wire.
    CorruptChunkInTransit { index: u64 },
    /// Deliverer or provider first submits a self-signed receipt for all chunks.
    InflatedClaim,
    /// Consumer signs a receipt for every chunk up front; a colluding
    /// deliverer skips delivery and relies on it.
    SybilReceipts,
    /// Consumer files a proof of misbehavior against a valid chunk.
    FalsePom,
    /// Consumer complains about a valid reveal set.
    FalseWrongRk,
    /// Consumer reports delivery right after the session starts.
    EarlyDelivered,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    #[default]
    Always,
    /// Active from this round on.
    AtRound(u64),
    /// Active once the party has received a message of this kind.
    OnKind(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub party: Role,
    #[serde(default)]
    pub trigger: Trigger,
    pub action: Action,
}

/// Evaluates a party's rules as messages arrive.
#[derive(Clone, Debug, Default)]
pub struct Behavior {
    rules: Vec<(Trigger, Action)>,
    seen: Vec<String>,
}

impl Behavior {
    pub fn for_party(rules: &[Rule], party: PartyId) -> Self {
        let role = Role::of(party);
        Behavior {
            rules: rules.iter().filter(|r| r.party == role).map(|r| (r.trigger.clone(), r.action.clone())).collect(),
            seen: Vec::new(),
        }
    }

    pub fn is_corrupted(&self) -> bool {
        !self.rules.is_empty()
    }

    pub fn observe(&mut self, kind: &str) {
        if !self.seen.iter().any(|k| k == kind) {
            self.seen.push(kind.to_string());
        }
    }

    pub fn active(&self, now: u64) -> Vec<Action> {
        self.rules
            .iter()
            .filter(|(t, _)| match t {
                Trigger::Always => true,
                Trigger::AtRound(r) => now >= *r,
                Trigger::OnKind(k) => self.seen.iter().any(|s| s == k),
            })
            .map(|(_, a)| a.clone())
            .collect()
    }
}

pub(crate) fn has(active: &[Action], a: &Action) -> bool {
    active.contains(a)
}

/// A protocol participant as seen by the scheduler.
pub trait Party: Send {
    fn id(&self) -> PartyId;

    fn on_message(&mut self, now: u64, from: Endpoint, msg: &Message, active: &[Action]) -> Vec<Outbound>;

    /// Called once per round after the inbox is drained.
    fn on_tick(&mut self, now: u64, active: &[Action]) -> Vec<Outbound>;

    fn next_deadline(&self) -> Option<u64>;

    /// True once the party has no further protocol obligations.
    fn halted(&self) -> bool;
}

/// Session id for sender `pk_s` and consumer `pk_c` under a contract.
pub(crate) fn sid_for(
    root: &Digest,
    address: &Digest,
    pk_s: &crate::crypto::PublicKey,
    pk_c: &crate::crypto::PublicKey,
    nonce: u64,
) -> Digest {
    crate::vfd::session_id(root, address, pk_s, pk_c, nonce)
}
