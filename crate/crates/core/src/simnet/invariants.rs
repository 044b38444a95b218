use serde::Serialize;

use super::Transcript;
use crate::arbiter::{Mode, PartyId, Phase};
use crate::protocols::KEY_BEARING_KINDS;

/// Outcome of one property check over a transcript.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub name: &'static str,
    /// The guarantee being checked.
    pub property: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &'static str, property: &'static str, failures: Vec<String>, ok_detail: String) -> Self {
        let pass = failures.is_empty();
        Verdict { name, property, pass, detail: if pass { ok_detail } else { failures.join("; ") } }
    }
}

/// Extra rounds allowed per session on top of the per-chunk cost.
pub const TIMELINESS_SLACK: u64 = 40;

/// Upper bound on the last active round of a run.
pub fn timeliness_bound(t: &Transcript) -> u64 {
    let c = &t.scenario.config;
    let per_chunk = match c.mode {
        Mode::Download => 2,
        Mode::Stream => 4,
    };
    c.theta * c.delta * (per_chunk * c.n + TIMELINESS_SLACK)
}

/// Evaluates every property over a finished run. Checks that concern a
/// party only apply when that party is honest.
pub fn check_invariants(t: &Transcript) -> Vec<Verdict> {
    let c = &t.scenario.config;
    let prices = c.prices;
    let honest = |p: PartyId| !t.parties.get(&p).is_some_and(|s| s.corrupted);
    let mut out = Vec::new();

    // Supply is fixed in every round and the books balance at the end.
    let initial: u64 = t.initial_balances.values().sum();
    let fin: u64 = t.final_balances.values().sum::<u64>() + t.residual_escrow;
    let mut f = Vec::new();
    if let Some(r) = t.first_conservation_violation {
        f.push(format!("supply changed in round {r}"));
    }
    if initial != fin {
        f.push(format!("initial total {initial} but final total {fin}"));
    }
    out.push(Verdict::new("conservation", "total supply is invariant", f, format!("total {initial}")));

    let f = if t.quiescent { vec![] } else { vec![format!("round cap {} reached", t.scenario.round_cap())] };
    out.push(Verdict::new("liveness", "every run halts", f, format!("halted at round {}", t.end_round)));

    // Honest consumers never pay for more than they can decrypt.
    let mut f = Vec::new();
    for cr in &t.consumers {
        if !honest(cr.id) {
            continue;
        }
        let paid = cr.initial as i128 - cr.final_balance as i128;
        if cr.correct_chunks != cr.output_chunks {
            f.push(format!("{} output {} chunks, {} correct", cr.id, cr.output_chunks, cr.correct_chunks));
        }
        if paid > (cr.correct_chunks * prices.b_c) as i128 {
            f.push(format!("{} paid {paid} for {} chunks", cr.id, cr.correct_chunks));
        }
        if c.mode == Mode::Download {
            for s in t.sessions.iter().filter(|s| s.consumer == cr.id) {
                if s.outcome == Phase::Sold && s.dispute.is_none() {
                    let want = (s.ctr * prices.b_c) as i128;
                    if paid != want || cr.correct_chunks != s.ctr {
                        f.push(format!(
                            "{} paid {paid} and holds {} chunks after selling {}",
                            cr.id, cr.correct_chunks, s.ctr
                        ));
                    }
                }
            }
        }
    }
    out.push(Verdict::new(
        "consumer_fairness",
        "an honest consumer pays only for chunks it decrypted",
        f,
        format!("{} consumers", t.consumers.len()),
    ));

    // Honest deliverer is paid for all but at most one delivered chunk per session.
    let mut f = Vec::new();
    if honest(PartyId::Deliverer) {
        let mut owed = 0i128;
        for s in &t.sessions {
            let sent = t.delivers_per_session.get(&s.nonce).copied().unwrap_or(0);
            if sent > s.ctr + 1 {
                f.push(format!("session {}: delivered {sent}, paid {}", s.nonce, s.ctr));
            }
            owed += (sent.saturating_sub(1) * prices.b_p) as i128;
        }
        let delta = t.balance_delta(PartyId::Deliverer);
        if delta < owed {
            f.push(format!("deliverer earned {delta}, owed at least {owed}"));
        }
    }
    out.push(Verdict::new(
        "delivery_fairness",
        "an honest deliverer is unpaid for at most one chunk per session",
        f,
        "slack within one chunk".into(),
    ));

    // Honest provider is paid for all but one chunk the adversary learned.
    let mut f = Vec::new();
    if honest(PartyId::Provider) {
        let gain = t.balance_delta(PartyId::Provider) + t.residual_escrow as i128;
        let due: i128 = t
            .consumers
            .iter()
            .map(|cr| (cr.adversary_learned.saturating_sub(1) * (prices.b_c - prices.b_p)) as i128)
            .sum();
        if gain < due {
            f.push(format!("provider gained {gain}, adversary learned chunks worth {due}"));
        }
    }
    out.push(Verdict::new(
        "provider_fairness",
        "an honest provider is paid for all but one chunk the adversary decrypts",
        f,
        "slack within one chunk".into(),
    ));

    let mut f = Vec::new();
    if let Some(d) = t.parties.get(&PartyId::Deliverer) {
        for k in KEY_BEARING_KINDS {
            if d.received_kinds.contains(*k) {
                f.push(format!("deliverer received `{k}`"));
            }
        }
    }
    out.push(Verdict::new(
        "confidentiality",
        "no key material is ever addressed to the deliverer",
        f,
        "deliverer saw ciphertexts only".into(),
    ));

    let bound = timeliness_bound(t);
    let f = if t.end_round <= bound { vec![] } else { vec![format!("last round {} exceeds {bound}", t.end_round)] };
    out.push(Verdict::new("timeliness", "runs finish within a linear round budget", f, format!("{} <= {bound}", t.end_round)));

    let mut f = Vec::new();
    for (p, st) in &t.parties {
        let name = p.to_string();
        let sent: u64 = t.messages().filter(|m| !m.dropped && m.from == name).map(|m| m.bytes as u64).sum();
        if sent != st.bytes_sent {
            f.push(format!("{p} sent counter {} vs log {sent}", st.bytes_sent));
        }
        if t.quiescent {
            let recv: u64 = t.messages().filter(|m| !m.dropped && m.to == name).map(|m| m.bytes as u64).sum();
            if recv != st.bytes_received {
                f.push(format!("{p} received counter {} vs log {recv}", st.bytes_received));
            }
        }
    }
    out.push(Verdict::new("byte_accounting", "byte counters match the message log", f, "counters agree".into()));

    let f: Vec<String> = t
        .messages()
        .filter(|m| !m.dropped && !(m.at > m.sent && m.at - m.sent <= c.delta))
        .take(5)
        .map(|m| format!("{} -> {} `{}` sent {} due {}", m.from, m.to, m.kind, m.sent, m.at))
        .collect();
    out.push(Verdict::new("delay_bound", "every envelope arrives within the delay bound", f, format!("delta {}", c.delta)));

    out
}
