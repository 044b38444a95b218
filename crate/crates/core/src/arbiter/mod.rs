//! Ledger-backed arbiter contracts for the downloading and streaming
//! protocols. One [`Contract`] instance is a deterministic reducer over
//! authenticated calls and round ticks; every accepted call is counted in
//! bytes so on-chain footprint can be measured.

mod ledger;
mod pom;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, GroupElement, PublicKey};
use crate::keytree::{validate_rkeys, EncryptedRevealSet};
use crate::vfd::{content_id, session_id, verify_proof, Receipt};

pub use ledger::{Ledger, LedgerError, ParsePartyError, PartyId};
pub use pom::{
    validate_pom_download, validate_pom_stream, DownloadContext, PomDownload, PomError, PomStream,
    StreamContext,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Download,
    Stream,
}

/// Contract phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Empty,
    Started,
    Joined,
    Ready,
    Initiated,
    Revealing,
    Revealed,
    Received,
    PayingDelivery,
    PayingRevealing,
    Sold,
    NotSold,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Sold | Phase::NotSold)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prices {
    /// Paid to the deliverer per delivered chunk.
    pub b_p: u64,
    /// Paid by the consumer per chunk.
    pub b_c: u64,
    /// Provider penalty fee per session.
    pub b_pf: u64,
}

impl Prices {
    /// Default penalty fee: a quarter of the consumer's full payment.
    pub fn with_default_penalty(n: u64, b_p: u64, b_c: u64) -> Self {
        Prices { b_p, b_c, b_pf: n * b_c / 4 }
    }
}

/// Contract timer durations in rounds (already multiplied by the network delay bound).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractTimers {
    pub deliver: u64,
    pub dispute: u64,
    pub receive: u64,
    pub finish: u64,
    /// How long the download contract waits for the deliverer's receipt.
    pub proof_wait: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Call {
    Start { pk_p: PublicKey, root: Digest, theta: u64, n: u64, prices: Prices },
    Join { pk_d: PublicKey },
    Prepared,
    Consume { pk_c: PublicKey, vpk_c: Option<GroupElement> },
    Delivered,
    VfdProof { receipt: Option<Receipt> },
    RevealKeys { erk: EncryptedRevealSet },
    WrongRk,
    PomDownload(Box<PomDownload>),
    Received,
    PomStream(Box<PomStream>),
    ClaimDelivery { receipt: Receipt },
    ClaimRevealing { receipt: Receipt },
    Reset,
    Withdraw,
}

impl Call {
    pub fn name(&self) -> &'static str {
        match self {
            Call::Start { .. } => "start",
            Call::Join { .. } => "join",
            Call::Prepared => "prepared",
            Call::Consume { .. } => "consume",
            Call::Delivered => "delivered",
            Call::VfdProof { .. } => "vfd_proof",
            Call::RevealKeys { .. } => "reveal_keys",
            Call::WrongRk => "wrong_rk",
            Call::PomDownload(_) => "pom_download",
            Call::Received => "received",
            Call::PomStream(_) => "pom_stream",
            Call::ClaimDelivery { .. } => "claim_delivery",
            Call::ClaimRevealing { .. } => "claim_revealing",
            Call::Reset => "reset",
            Call::Withdraw => "withdraw",
        }
    }
}

/// Broadcast to every party the round after it is emitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Started { pk_p: PublicKey, root: Digest, theta: u64, n: u64, prices: Prices },
    Joined { pk_d: PublicKey },
    Ready,
    Initiated { consumer: PartyId, pk_c: PublicKey, vpk_c: Option<GroupElement> },
    GetVfdProof,
    Revealing { ctr: u64 },
    Revealed { erk: EncryptedRevealSet },
    Sold,
    NotSold,
    Received,
    PayingDelivery,
    PayingRevealing,
    Withdrawn { amount: u64 },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Started { .. } => "started",
            Event::Joined { .. } => "joined",
            Event::Ready => "ready",
            Event::Initiated { .. } => "initiated",
            Event::GetVfdProof => "get_vfd_proof",
            Event::Revealing { .. } => "revealing",
            Event::Revealed { .. } => "revealed",
            Event::Sold => "sold",
            Event::NotSold => "not_sold",
            Event::Received => "received_event",
            Event::PayingDelivery => "paying_delivery",
            Event::PayingRevealing => "paying_revealing",
            Event::Withdrawn { .. } => "withdrawn",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Reject {
    #[error("`{call}` not allowed in phase {phase:?}")]
    WrongPhase { call: &'static str, phase: Phase },
    #[error("`{call}` not available in {mode:?} mode")]
    WrongMode { call: &'static str, mode: Mode },
    #[error("{from} may not send `{call}`")]
    Unauthorized { call: &'static str, from: PartyId },
    #[error("invalid start parameters: {0}")]
    BadParameters(&'static str),
    #[error(transparent)]
    Funds(#[from] LedgerError),
    #[error("no repeatable sessions left")]
    NoSessionsLeft,
    #[error("deadline passed")]
    Expired,
    #[error("receipt rejected: {0}")]
    BadReceipt(&'static str),
    #[error("reveal set is a valid cover")]
    RevealSetValid,
    #[error("proof of misbehavior rejected: {0}")]
    Pom(#[from] PomError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispute {
    WrongRk,
    Pom,
    RevealTimeout,
}

/// Record of one finished consumer session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SessionRecord {
    pub nonce: u64,
    pub consumer: PartyId,
    pub ctr: u64,
    pub ctr_d: u64,
    pub ctr_p: u64,
    pub outcome: Phase,
    pub plt: bool,
    pub dispute: Option<Dispute>,
    pub start_round: u64,
    pub end_round: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AcceptedCall {
    pub round: u64,
    pub from: PartyId,
    pub call: &'static str,
    pub bytes: usize,
    /// Session nonce for consumer-session calls; `None` for setup and administration.
    pub session: Option<u64>,
}

#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Final payouts credit the provider one coin that never left escrow.
    MintOnPayout,
}

#[derive(Clone, Debug)]
struct Session {
    consumer: PartyId,
    pk_c: PublicKey,
    vpk_c: Option<GroupElement>,
    start: u64,
    ctr: u64,
    ctr_d: u64,
    ctr_p: u64,
    plt: bool,
    erk_hash: Option<Digest>,
    erk_positions: Vec<u64>,
    /// Absolute deadlines.
    t_deliver: u64,
    t_proof: Option<u64>,
    t_reveal: u64,
    t_dispute: u64,
    t_receive: u64,
    t_finish: u64,
}

#[derive(Clone, Debug)]
struct Terms {
    pk_p: PublicKey,
    root: Digest,
    n: u64,
    prices: Prices,
}

pub struct Contract {
    mode: Mode,
    address: Digest,
    timers: ContractTimers,
    phase: Phase,
    theta: u64,
    terms: Option<Terms>,
    pk_d: Option<PublicKey>,
    nonce: u64,
    session: Option<Session>,
    accepted: Vec<AcceptedCall>,
    records: Vec<SessionRecord>,
    #[doc(hidden)]
    pub fault: Fault,
}

type Handled = Result<Vec<Event>, Reject>;

impl Contract {
    pub fn new(mode: Mode, address: Digest, timers: ContractTimers) -> Self {
        Contract {
            mode,
            address,
            timers,
            phase: Phase::Empty,
            theta: 0,
            terms: None,
            pk_d: None,
            nonce: 0,
            session: None,
            accepted: Vec::new(),
            records: Vec::new(),
            fault: Fault::None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn address(&self) -> &Digest {
        &self.address
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn theta(&self) -> u64 {
        self.theta
    }

    /// Session counter; also the nonce in session ids.
    pub fn nonce(&self) -> u64 {
        self.nonce
    }

    pub fn ctr(&self) -> u64 {
        self.session.as_ref().map_or(0, |s| s.ctr)
    }

    /// Consumer of the running session.
    pub fn consumer(&self) -> Option<PartyId> {
        self.session.as_ref().map(|s| s.consumer)
    }

    pub fn claims(&self) -> (u64, u64) {
        self.session.as_ref().map_or((0, 0), |s| (s.ctr_d, s.ctr_p))
    }

    pub fn plt(&self) -> bool {
        self.session.as_ref().is_some_and(|s| s.plt)
    }

    pub fn accepted_calls(&self) -> &[AcceptedCall] {
        &self.accepted
    }

    pub fn sessions(&self) -> &[SessionRecord] {
        &self.records
    }

    /// Earliest armed deadline, if any.
    pub fn next_deadline(&self) -> Option<u64> {
        let s = self.session.as_ref()?;
        match (self.mode, self.phase) {
            (Mode::Download, Phase::Initiated) => Some(s.t_proof.unwrap_or(s.t_deliver)),
            (Mode::Download, Phase::Revealing) => Some(s.t_reveal),
            (Mode::Download, Phase::Revealed) => Some(s.t_dispute),
            (Mode::Stream, Phase::Initiated) => Some(s.t_receive.min(s.t_finish)),
            (Mode::Stream, Phase::Received | Phase::PayingDelivery | Phase::PayingRevealing) => {
                Some(s.t_finish)
            }
            _ => None,
        }
    }

    fn terms(&self) -> &Terms {
        self.terms.as_ref().expect("terms exist after start")
    }

    fn wrong_phase(&self, call: &Call) -> Reject {
        Reject::WrongPhase { call: call.name(), phase: self.phase }
    }

    fn require_phase(&self, call: &Call, allowed: &[Phase]) -> Result<(), Reject> {
        if allowed.contains(&self.phase) {
            Ok(())
        } else {
            Err(self.wrong_phase(call))
        }
    }

    fn require_mode(&self, call: &Call, mode: Mode) -> Result<(), Reject> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(Reject::WrongMode { call: call.name(), mode: self.mode })
        }
    }

    fn require_from(&self, call: &Call, from: PartyId, expected: PartyId) -> Result<(), Reject> {
        if from == expected {
            Ok(())
        } else {
            Err(Reject::Unauthorized { call: call.name(), from })
        }
    }

    fn require_consumer(&self, call: &Call, from: PartyId) -> Result<(), Reject> {
        match &self.session {
            Some(s) if s.consumer == from => Ok(()),
            _ => Err(Reject::Unauthorized { call: call.name(), from }),
        }
    }

    fn sid(&self, pk_s: &PublicKey, pk_r: &PublicKey) -> Digest {
        session_id(&self.terms().root, &self.address, pk_s, pk_r, self.nonce)
    }

    /// Escrow portion locked per session by the provider.
    fn portion(t: &Terms) -> u64 {
        t.n * t.prices.b_p + t.prices.b_pf
    }

    /// Handles one authenticated call. A rejected call leaves state and
    /// ledger untouched.
    pub fn handle(&mut self, ledger: &mut Ledger, now: u64, from: PartyId, call: &Call, bytes: usize) -> Handled {
        let session = match call {
            Call::Start { .. } | Call::Join { .. } | Call::Prepared | Call::Reset | Call::Withdraw => None,
            _ => Some(self.nonce),
        };
        let events = self.dispatch(ledger, now, from, call)?;
        self.accepted.push(AcceptedCall { round: now, from, call: call.name(), bytes, session });
        Ok(events)
    }

    fn dispatch(&mut self, ledger: &mut Ledger, now: u64, from: PartyId, call: &Call) -> Handled {
        if self.phase == Phase::Empty && !matches!(call, Call::Start { .. }) {
            return Err(self.wrong_phase(call));
        }
        match call {
            Call::Start { pk_p, root, theta, n, prices } => {
                self.require_from(call, from, PartyId::Provider)?;
                self.require_phase(call, &[Phase::Empty])?;
                if *n == 0 || !n.is_power_of_two() {
                    return Err(Reject::BadParameters("chunk count must be a power of two"));
                }
                if prices.b_c <= prices.b_p {
                    return Err(Reject::BadParameters("consumer price must exceed deliverer price"));
                }
                if *theta == 0 {
                    return Err(Reject::BadParameters("at least one session"));
                }
                let terms = Terms { pk_p: *pk_p, root: *root, n: *n, prices: *prices };
                let amount = theta
                    .checked_mul(Self::portion(&terms))
                    .ok_or(Reject::Funds(LedgerError::Overflow))?;
                ledger.lock(PartyId::Provider, amount)?;
                self.terms = Some(terms);
                self.theta = *theta;
                self.phase = Phase::Started;
                Ok(vec![Event::Started { pk_p: *pk_p, root: *root, theta: *theta, n: *n, prices: *prices }])
            }
            Call::Join { pk_d } => {
                self.require_from(call, from, PartyId::Deliverer)?;
                self.require_phase(call, &[Phase::Started])?;
                self.pk_d = Some(*pk_d);
                self.phase = Phase::Joined;
                Ok(vec![Event::Joined { pk_d: *pk_d }])
            }
            Call::Prepared => {
                self.require_from(call, from, PartyId::Deliverer)?;
                self.require_phase(call, &[Phase::Joined])?;
                self.phase = Phase::Ready;
                Ok(vec![Event::Ready])
            }
            Call::Consume { pk_c, vpk_c } => {
                if !matches!(from, PartyId::Consumer(_)) {
                    return Err(Reject::Unauthorized { call: call.name(), from });
                }
                if self.theta == 0 {
                    return Err(Reject::NoSessionsLeft);
                }
                self.require_phase(call, &[Phase::Ready])?;
                if self.mode == Mode::Download && vpk_c.is_none() {
                    return Err(Reject::BadParameters("download consumers must supply a decryption key"));
                }
                let t = self.terms();
                ledger.lock(from, t.n * t.prices.b_c)?;
                let tm = self.timers;
                self.session = Some(Session {
                    consumer: from,
                    pk_c: *pk_c,
                    vpk_c: *vpk_c,
                    start: now,
                    ctr: 0,
                    ctr_d: 0,
                    ctr_p: 0,
                    plt: false,
                    erk_hash: None,
                    erk_positions: Vec::new(),
                    t_deliver: now + tm.deliver,
                    t_proof: None,
                    t_reveal: 0,
                    t_dispute: 0,
                    t_receive: now + tm.receive,
                    t_finish: now + tm.finish,
                });
                self.phase = Phase::Initiated;
                Ok(vec![Event::Initiated { consumer: from, pk_c: *pk_c, vpk_c: *vpk_c }])
            }
            Call::Delivered => {
                self.require_mode(call, Mode::Download)?;
                self.require_consumer(call, from)?;
                self.require_phase(call, &[Phase::Initiated])?;
                let s = self.session.as_mut().expect("initiated session");
                if s.t_proof.is_some() {
                    return Err(self.wrong_phase(call));
                }
                s.t_proof = Some(now + self.timers.proof_wait);
                Ok(vec![Event::GetVfdProof])
            }
            Call::VfdProof { receipt } => {
                self.require_mode(call, Mode::Download)?;
                self.require_from(call, from, PartyId::Deliverer)?;
                self.require_phase(call, &[Phase::Initiated])?;
                let s = self.session.as_ref().expect("initiated session");
                if s.t_proof.is_none() {
                    return Err(self.wrong_phase(call));
                }
                let pk_d = self.pk_d.expect("joined");
                let ctr = match receipt {
                    None => 0,
                    Some(r) => {
                        if r.sid != self.sid(&pk_d, &s.pk_c) {
                            return Err(Reject::BadReceipt("session id"));
                        }
                        let ctr = verify_proof(Some(r), &s.pk_c, &pk_d);
                        if ctr == 0 || ctr > self.terms().n {
                            return Err(Reject::BadReceipt("signature or index"));
                        }
                        ctr
                    }
                };
                self.settle_delivery(ledger, now, ctr)
            }
            Call::RevealKeys { erk } => {
                self.require_mode(call, Mode::Download)?;
                self.require_from(call, from, PartyId::Provider)?;
                self.require_phase(call, &[Phase::Revealing])?;
                let s = self.session.as_mut().expect("revealing session");
                s.erk_hash = Some(erk.digest());
                s.erk_positions = erk.positions();
                s.t_dispute = now + self.timers.dispute;
                self.phase = Phase::Revealed;
                Ok(vec![Event::Revealed { erk: erk.clone() }])
            }
            Call::WrongRk => {
                self.require_mode(call, Mode::Download)?;
                self.require_consumer(call, from)?;
                self.require_phase(call, &[Phase::Revealed])?;
                let s = self.session.as_ref().expect("revealed session");
                if now >= s.t_dispute {
                    return Err(Reject::Expired);
                }
                if validate_rkeys(self.terms().n, s.ctr, &s.erk_positions) {
                    return Err(Reject::RevealSetValid);
                }
                self.refund_consumer_with_penalty(ledger, now, Dispute::WrongRk)
            }
            Call::PomDownload(pom) => {
                self.require_mode(call, Mode::Download)?;
                self.require_consumer(call, from)?;
                self.require_phase(call, &[Phase::Revealed])?;
                let s = self.session.as_ref().expect("revealed session");
                if now >= s.t_dispute {
                    return Err(Reject::Expired);
                }
                let t = self.terms();
                let cid = content_id(&t.root, &self.address, &t.pk_p);
                let ctx = DownloadContext {
                    n: t.n,
                    ctr: s.ctr,
                    root: &t.root,
                    erk_hash: s.erk_hash.as_ref().expect("revealed"),
                    pk_p: &t.pk_p,
                    vpk_c: s.vpk_c.as_ref().expect("download consumer key"),
                    cid: &cid,
                };
                validate_pom_download(pom, &ctx)?;
                self.refund_consumer_with_penalty(ledger, now, Dispute::Pom)
            }
            Call::Received => {
                self.require_mode(call, Mode::Stream)?;
                self.require_consumer(call, from)?;
                self.require_phase(call, &[Phase::Initiated])?;
                if now >= self.session.as_ref().expect("session").t_receive {
                    return Err(Reject::Expired);
                }
                self.phase = Phase::Received;
                Ok(vec![Event::Received])
            }
            Call::PomStream(pom) => {
                self.require_mode(call, Mode::Stream)?;
                self.require_consumer(call, from)?;
                self.require_phase(call, &[Phase::Initiated])?;
                let s = self.session.as_ref().expect("session");
                if now >= s.t_receive {
                    return Err(Reject::Expired);
                }
                let t = self.terms();
                let cid = content_id(&t.root, &self.address, &t.pk_p);
                let sid = self.sid(&t.pk_p, &s.pk_c);
                let ctx = StreamContext { n: t.n, root: &t.root, pk_p: &t.pk_p, cid: &cid, sid: &sid };
                validate_pom_stream(pom, &ctx)?;
                self.session.as_mut().expect("session").plt = true;
                self.phase = Phase::Received;
                Ok(vec![Event::Received])
            }
            Call::ClaimDelivery { receipt } => {
                self.require_mode(call, Mode::Stream)?;
                self.require_from(call, from, PartyId::Deliverer)?;
                self.claim(now, call, receipt, true)
            }
            Call::ClaimRevealing { receipt } => {
                self.require_mode(call, Mode::Stream)?;
                self.require_from(call, from, PartyId::Provider)?;
                self.claim(now, call, receipt, false)
            }
            Call::Reset => {
                self.require_from(call, from, PartyId::Provider)?;
                self.require_phase(call, &[Phase::Sold, Phase::NotSold])?;
                self.session = None;
                self.theta -= 1;
                self.nonce += 1;
                self.phase = Phase::Ready;
                Ok(vec![Event::Ready])
            }
            Call::Withdraw => {
                self.require_from(call, from, PartyId::Provider)?;
                self.require_phase(call, &[Phase::Started, Phase::Joined, Phase::Ready])?;
                // Outside a session every escrowed coin is an unused provider portion.
                let amount = ledger.escrow();
                ledger.release(PartyId::Provider, amount)?;
                self.theta = 0;
                Ok(vec![Event::Withdrawn { amount }])
            }
        }
    }

    /// Shared claim rule. A claim needs a verified receipt from the
    /// consumer bound to the claimant, must precede the finish deadline,
    /// and may only raise the claimant's recorded index.
    fn claim(&mut self, now: u64, call: &Call, r: &Receipt, deliverer: bool) -> Handled {
        let own = if deliverer { Phase::PayingDelivery } else { Phase::PayingRevealing };
        let other = if deliverer { Phase::PayingRevealing } else { Phase::PayingDelivery };
        self.require_phase(call, &[Phase::Initiated, Phase::Received, own, other])?;
        let pk_s = if deliverer { self.pk_d.expect("joined") } else { self.terms().pk_p };
        let n = self.terms().n;
        let s = self.session.as_ref().expect("session");
        if now >= s.t_finish {
            return Err(Reject::Expired);
        }
        if r.index == 0 || r.index > n || s.ctr != 0 {
            return Err(Reject::BadReceipt("index"));
        }
        let previous = if deliverer { s.ctr_d } else { s.ctr_p };
        let gate = r.index == n
            || self.phase == Phase::Received
            || self.phase == other
            || (self.phase == own && previous > 0);
        if !gate {
            return Err(self.wrong_phase(call));
        }
        if r.index <= previous {
            return Err(Reject::BadReceipt("not above the recorded claim"));
        }
        if r.sid != self.sid(&pk_s, &s.pk_c) {
            return Err(Reject::BadReceipt("session id"));
        }
        if !r.verify(&s.pk_c, &pk_s) {
            return Err(Reject::BadReceipt("signature"));
        }
        let s = self.session.as_mut().expect("session");
        if deliverer {
            s.ctr_d = r.index;
        } else {
            s.ctr_p = r.index;
        }
        self.phase = own;
        Ok(vec![if deliverer { Event::PayingDelivery } else { Event::PayingRevealing }])
    }

    fn settle_delivery(&mut self, ledger: &mut Ledger, now: u64, ctr: u64) -> Handled {
        let t = self.terms().clone();
        ledger.release(PartyId::Deliverer, ctr * t.prices.b_p)?;
        ledger.release(PartyId::Provider, (t.n - ctr) * t.prices.b_p)?;
        let s = self.session.as_mut().expect("session");
        s.ctr = ctr;
        if ctr == 0 {
            // Nothing to reveal: the consumer is refunded and the penalty
            // fee returns to the provider.
            ledger.release(s.consumer, t.n * t.prices.b_c)?;
            ledger.release(PartyId::Provider, t.prices.b_pf)?;
            self.finish(ledger, now, Phase::NotSold, None);
            return Ok(vec![Event::NotSold]);
        }
        s.t_reveal = now + self.timers.dispute;
        self.phase = Phase::Revealing;
        Ok(vec![Event::Revealing { ctr }])
    }

    fn refund_consumer_with_penalty(&mut self, ledger: &mut Ledger, now: u64, d: Dispute) -> Handled {
        let t = self.terms().clone();
        let consumer = self.session.as_ref().expect("session").consumer;
        ledger.release(consumer, t.n * t.prices.b_c + t.prices.b_pf)?;
        self.finish(ledger, now, Phase::NotSold, Some(d));
        Ok(vec![Event::NotSold])
    }

    fn finish(&mut self, ledger: &mut Ledger, now: u64, outcome: Phase, dispute: Option<Dispute>) {
        if self.fault == Fault::MintOnPayout {
            ledger.mint(PartyId::Provider, 1);
        }
        let s = self.session.as_ref().expect("session");
        self.records.push(SessionRecord {
            nonce: self.nonce,
            consumer: s.consumer,
            ctr: s.ctr,
            ctr_d: s.ctr_d,
            ctr_p: s.ctr_p,
            outcome,
            plt: s.plt,
            dispute,
            start_round: s.start,
            end_round: now,
        });
        self.phase = outcome;
    }

    /// Fires every deadline that has passed at `now`.
    pub fn tick(&mut self, ledger: &mut Ledger, now: u64) -> Vec<Event> {
        let mut events = Vec::new();
        let Some(s) = self.session.clone() else {
            return events;
        };
        let t = self.terms().clone();
        let result: Result<(), LedgerError> = (|| {
            match (self.mode, self.phase) {
                (Mode::Download, Phase::Initiated) => match s.t_proof {
                    Some(tp) if now >= tp => {
                        events.extend(self.settle_delivery(ledger, now, 0).map_err(reject_to_ledger)?);
                    }
                    None if now >= s.t_deliver => {
                        self.session.as_mut().expect("session").t_proof = Some(now + self.timers.proof_wait);
                        events.push(Event::GetVfdProof);
                    }
                    _ => {}
                },
                (Mode::Download, Phase::Revealing) if now >= s.t_reveal => {
                    events.extend(
                        self.refund_consumer_with_penalty(ledger, now, Dispute::RevealTimeout)
                            .map_err(reject_to_ledger)?,
                    );
                }
                (Mode::Download, Phase::Revealed) if now >= s.t_dispute => {
                    ledger.release(PartyId::Provider, s.ctr * t.prices.b_c + t.prices.b_pf)?;
                    ledger.release(s.consumer, (t.n - s.ctr) * t.prices.b_c)?;
                    self.finish(ledger, now, Phase::Sold, None);
                    events.push(Event::Sold);
                }
                (Mode::Stream, _) => {
                    if self.phase == Phase::Initiated && now >= s.t_receive {
                        self.phase = Phase::Received;
                        events.push(Event::Received);
                    }
                    let paying = [Phase::Initiated, Phase::Received, Phase::PayingDelivery, Phase::PayingRevealing];
                    if paying.contains(&self.phase) && now >= s.t_finish {
                        events.push(self.stream_payout(ledger, now, &t)?);
                    }
                }
                _ => {}
            }
            Ok(())
        })();
        result.expect("escrow always covers contract payouts");
        events
    }

    fn stream_payout(&mut self, ledger: &mut Ledger, now: u64, t: &Terms) -> Result<Event, LedgerError> {
        let s = self.session.as_mut().expect("session");
        let ctr = s.ctr_d.max(s.ctr_p);
        s.ctr = ctr;
        let (n, b) = (t.n, t.prices);
        let consumer = s.consumer;
        ledger.release(PartyId::Deliverer, ctr * b.b_p)?;
        if s.plt {
            ledger.release(PartyId::Provider, (n - ctr) * b.b_p + ctr * b.b_c)?;
            ledger.release(consumer, (n - ctr) * b.b_c + b.b_pf)?;
        } else {
            ledger.release(PartyId::Provider, (n - ctr) * b.b_p + ctr * b.b_c + b.b_pf)?;
            ledger.release(consumer, (n - ctr) * b.b_c)?;
        }
        let (outcome, ev) = if ctr > 0 { (Phase::Sold, Event::Sold) } else { (Phase::NotSold, Event::NotSold) };
        self.finish(ledger, now, outcome, None);
        Ok(ev)
    }
}

fn reject_to_ledger(r: Reject) -> LedgerError {
    match r {
        Reject::Funds(e) => e,
        _ => LedgerError::Overflow,
    }
}

#[cfg(test)]
mod tests;
