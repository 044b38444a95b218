//! Isolated runs of the verifiable delivery exchange under randomized
//! abort and withhold schedules, with the delay bound fixed at one round.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::crypto::{hash_parts, SigKeyPair};
use crate::vfd::{content_id, session_id, verify_proof, Receipt, SignedChunk, VfdReceiver, VfdSender};

/// Timer used by both machines: one round trip.
pub const LAB_TIMER: u64 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Schedule {
    /// Sender goes silent once it has sent this many chunks.
    pub sender_abort_after: Option<u64>,
    /// Sender replaces chunk `k` by chunk `k + 1`.
    pub sender_skip_at: Option<u64>,
    /// Receiver goes silent once it holds this many chunks.
    pub receiver_abort_after: Option<u64>,
    /// Receiver drops the receipt for this chunk but keeps listening.
    pub withhold_receipt: Option<u64>,
    /// Receiver answers chunk `k` with a receipt for a different index.
    pub bad_receipt_at: Option<u64>,
}

impl Schedule {
    pub fn sender_honest(&self) -> bool {
        self.sender_abort_after.is_none() && self.sender_skip_at.is_none()
    }

    pub fn receiver_honest(&self) -> bool {
        self.receiver_abort_after.is_none() && self.withhold_receipt.is_none() && self.bad_receipt_at.is_none()
    }

    /// Picks one corrupted side (or none) and one deviation point.
    pub fn random(rng: &mut impl Rng, n: u64) -> Self {
        let k = rng.gen_range(0..=n);
        let j = rng.gen_range(1..=n);
        let mut s = Schedule::default();
        match rng.gen_range(0..6) {
            0 => {}
            1 => s.sender_abort_after = Some(k),
            2 => s.sender_skip_at = Some(j),
            3 => s.receiver_abort_after = Some(k),
            4 => s.withhold_receipt = Some(j),
            _ => s.bad_receipt_at = Some(j),
        }
        s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LabOutcome {
    pub seed: u64,
    pub schedule: Schedule,
    /// Round at which both sides had stopped.
    pub rounds: u64,
    /// Count certified by the sender's final proof.
    pub ctr: u64,
    /// Valid chunks the receiver holds.
    pub held: u64,
    pub violations: Vec<String>,
}

enum Wire {
    Chunk(SignedChunk),
    Receipt(Receipt),
}

/// Runs one exchange of `n` chunks and checks termination within `2n`
/// rounds and the two proof guarantees for whichever sides are honest.
pub fn run(n: u64, seed: u64) -> LabOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let schedule = Schedule::random(&mut rng, n);
    run_with(n, seed, schedule)
}

pub fn run_with(n: u64, seed: u64, schedule: Schedule) -> LabOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5f_d1ab);
    let provider = SigKeyPair::generate(&mut rng);
    let sender_keys = SigKeyPair::generate(&mut rng);
    let receiver_keys = SigKeyPair::generate(&mut rng);
    let root = hash_parts(&[b"lab-root", &seed.to_be_bytes()]);
    let contract = hash_parts(&[b"lab-contract", &seed.to_be_bytes()]);
    let cid = content_id(&root, &contract, &provider.public());
    let sid = session_id(&root, &contract, &sender_keys.public(), &receiver_keys.public(), 0);
    let chunks: Arc<[SignedChunk]> = (1..=n)
        .map(|i| {
            let mut ct = vec![0u8; 32];
            rng.fill_bytes(&mut ct);
            SignedChunk::sign(&provider, &cid, i, ct)
        })
        .collect();

    let mut sender = VfdSender::new(chunks.clone(), sid, sender_keys.public(), receiver_keys.public(), LAB_TIMER);
    let mut receiver =
        VfdReceiver::new(n, provider.public(), cid, sid, sender_keys.public(), receiver_keys.clone(), LAB_TIMER);
    let mut sender_silent = false;
    let mut receiver_silent = false;

    let mut to_receiver: Vec<(u64, SignedChunk)> = Vec::new();
    let mut to_sender: Vec<(u64, Receipt)> = Vec::new();
    let send_chunk = |c: SignedChunk, now: u64, q: &mut Vec<(u64, SignedChunk)>| {
        let c = match schedule.sender_skip_at {
            Some(k) if c.index == k && k < n => chunks[k as usize].clone(),
            _ => c,
        };
        q.push((now + 1, c));
    };

    receiver.activate(0);
    if schedule.sender_abort_after == Some(0) {
        sender_silent = true;
    } else if let Some(c) = sender.activate(0) {
        send_chunk(c, 0, &mut to_receiver);
    }

    let cap = 10 * n + 10;
    let mut now = 0;
    let mut last = 0;
    loop {
        let sender_done = sender_silent || sender.halted();
        let receiver_done = receiver_silent || receiver.halted();
        if (sender_done && receiver_done) || now > cap {
            break;
        }
        now += 1;
        let mut out = Vec::new();
        for (at, c) in std::mem::take(&mut to_receiver) {
            if at != now {
                to_receiver.push((at, c));
                continue;
            }
            if receiver_silent {
                continue;
            }
            if let Some(r) = receiver.on_deliver(now, &c) {
                let idx = r.index;
                if schedule.receiver_abort_after.is_some_and(|k| receiver.accepted().len() as u64 > k) {
                    receiver_silent = true;
                    continue;
                }
                if schedule.withhold_receipt == Some(idx) {
                    continue;
                }
                let r = if schedule.bad_receipt_at == Some(idx) {
                    Receipt::sign(&receiver_keys, sid, idx + 1, &sender_keys.public())
                } else {
                    r
                };
                out.push(Wire::Receipt(r));
            }
        }
        if !receiver_silent {
            receiver.on_tick(now);
        }
        for (at, r) in std::mem::take(&mut to_sender) {
            if at != now {
                to_sender.push((at, r));
                continue;
            }
            if sender_silent {
                continue;
            }
            if schedule.sender_abort_after.is_some_and(|k| sender.sent() >= k) {
                sender_silent = true;
                continue;
            }
            if let Some(c) = sender.on_receipt(now, &r) {
                out.push(Wire::Chunk(c));
            }
        }
        if !sender_silent {
            sender.on_tick(now);
        }
        for w in out {
            match w {
                Wire::Chunk(c) => send_chunk(c, now, &mut to_receiver),
                Wire::Receipt(r) => to_sender.push((now + 1, r)),
            }
        }
        last = now;
    }

    // A silent receiver holds what it accepted before going quiet.
    let held = receiver.accepted().iter().filter(|c| c.is_valid(&provider.public(), &cid)).count() as u64;
    let ctr = verify_proof(sender.proof(), &receiver_keys.public(), &sender_keys.public());
    let mut violations = Vec::new();
    if last > 2 * n {
        violations.push(format!("ran {last} rounds for n = {n}"));
    }
    if schedule.receiver_honest() && ctr > held {
        violations.push(format!("proof certifies {ctr} but receiver holds {held}"));
    }
    if schedule.sender_honest() && ctr + 1 < held {
        violations.push(format!("receiver holds {held} but sender proof is only {ctr}"));
    }
    LabOutcome { seed, schedule, rounds: last, ctr, held, violations }
}
