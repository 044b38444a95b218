use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::crypto::{hash, sym_encrypt, SigKeyPair, SymKey, VpkeKeyPair};
use crate::keytree::{KeyTree, RevealSet, RevealedKey};
use crate::merkle::MerkleTree;
use crate::vfd::{key_reveal_message, SignedChunk};

const P: PartyId = PartyId::Provider;
const D: PartyId = PartyId::Deliverer;
const C: PartyId = PartyId::Consumer(0);

const TIMERS: ContractTimers = ContractTimers { deliver: 22, dispute: 8, receive: 40, finish: 48, proof_wait: 2 };

struct Fixture {
    n: u64,
    prices: Prices,
    p: SigKeyPair,
    d: SigKeyPair,
    c: SigKeyPair,
    vc: VpkeKeyPair,
    kt: KeyTree,
    content: Vec<Vec<u8>>,
    mt: MerkleTree,
    address: Digest,
    rng: ChaCha20Rng,
}

impl Fixture {
    fn new(n: u64, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let p = SigKeyPair::generate(&mut rng);
        let d = SigKeyPair::generate(&mut rng);
        let c = SigKeyPair::generate(&mut rng);
        let vc = VpkeKeyPair::generate(&mut rng);
        let kt = KeyTree::generate(n, &SymKey::random(&mut rng)).unwrap();
        let content: Vec<Vec<u8>> = (0..n).map(|_| (0..64).map(|_| rng.gen()).collect()).collect();
        let mt = MerkleTree::build(&content).unwrap();
        Fixture {
            n,
            prices: Prices { b_p: 10, b_c: 25, b_pf: n * 25 / 4 },
            p,
            d,
            c,
            vc,
            kt,
            content,
            mt,
            address: hash(b"contract"),
            rng,
        }
    }

    fn supply(&self) -> u64 {
        self.n * self.prices.b_p + self.prices.b_pf + self.n * self.prices.b_c
    }

    fn ledger(&self) -> Ledger {
        let t = &self.prices;
        Ledger::new([(P, self.n * t.b_p + t.b_pf), (D, 0), (C, self.n * t.b_c)])
    }

    fn cid(&self) -> Digest {
        content_id(&self.mt.root(), &self.address, &self.p.public())
    }

    fn sid(&self, s: &SigKeyPair) -> Digest {
        session_id(&self.mt.root(), &self.address, &s.public(), &self.c.public(), 0)
    }

    fn chunk(&self, i: u64) -> SignedChunk {
        let key = self.kt.chunk_key(i).unwrap();
        let ct = sym_encrypt(&key, &self.content[(i - 1) as usize]).unwrap();
        SignedChunk::sign(&self.p, &self.cid(), i, ct)
    }

    /// Runs a contract up to `Initiated`.
    fn initiated(&self, mode: Mode, ledger: &mut Ledger) -> Contract {
        let mut k = Contract::new(mode, self.address, TIMERS);
        let start = Call::Start {
            pk_p: self.p.public(),
            root: self.mt.root(),
            theta: 1,
            n: self.n,
            prices: self.prices,
        };
        k.handle(ledger, 0, P, &start, 0).unwrap();
        k.handle(ledger, 1, D, &Call::Join { pk_d: self.d.public() }, 0).unwrap();
        k.handle(ledger, 2, D, &Call::Prepared, 0).unwrap();
        let vpk_c = (mode == Mode::Download).then(|| self.vc.public());
        let ev = k.handle(ledger, 3, C, &Call::Consume { pk_c: self.c.public(), vpk_c }, 0).unwrap();
        assert!(matches!(ev[0], Event::Initiated { consumer: C, .. }));
        k
    }

    /// Download contract in `Revealed` with an honest reveal for `ctr`.
    fn revealed(&mut self, ledger: &mut Ledger, ctr: u64) -> (Contract, EncryptedRevealSet) {
        let rk = self.kt.reveal(ctr).unwrap();
        self.revealed_with(ledger, ctr, rk)
    }

    fn revealed_with(&mut self, ledger: &mut Ledger, ctr: u64, rk: RevealSet) -> (Contract, EncryptedRevealSet) {
        let mut k = self.initiated(Mode::Download, ledger);
        k.handle(ledger, 10, C, &Call::Delivered, 0).unwrap();
        let receipt = Receipt::sign(&self.c, self.sid(&self.d), ctr, &self.d.public());
        let ev = k.handle(ledger, 11, D, &Call::VfdProof { receipt: Some(receipt) }, 0).unwrap();
        assert_eq!(ev, vec![Event::Revealing { ctr }]);
        let erk = rk.encrypt(&self.vc.public(), &mut self.rng).unwrap();
        k.handle(ledger, 12, P, &Call::RevealKeys { erk: erk.clone() }, 0).unwrap();
        assert_eq!(k.phase(), Phase::Revealed);
        (k, erk)
    }

    fn pom(&mut self, i: u64, j: u64, chunk: SignedChunk, erk: &EncryptedRevealSet) -> PomDownload {
        let (rk_element, proof) = prove_pke(&self.vc, &erk.elements[j as usize].ciphertext, &mut self.rng);
        PomDownload {
            i,
            j,
            chunk,
            leaf: self.mt.leaf(i).unwrap(),
            mtp: self.mt.gen_proof(i).unwrap(),
            rk_element,
            erk: erk.clone(),
            proof,
        }
    }
}

use crate::crypto::prove_pke;

#[test]
fn start_without_enough_funds_is_rejected() {
    let f = Fixture::new(8, 1);
    let mut ledger = Ledger::new([(P, f.n * f.prices.b_p + f.prices.b_pf - 1)]);
    let mut k = Contract::new(Mode::Download, f.address, TIMERS);
    let start = Call::Start { pk_p: f.p.public(), root: f.mt.root(), theta: 1, n: f.n, prices: f.prices };
    let err = k.handle(&mut ledger, 0, P, &start, 0).unwrap_err();
    assert!(matches!(err, Reject::Funds(LedgerError::Insufficient { .. })));
    assert_eq!(k.phase(), Phase::Empty);
    assert_eq!(ledger.escrow(), 0);
    assert!(k.accepted_calls().is_empty());

    // θ multiplies the lock.
    let mut ledger = Ledger::new([(P, 2 * (f.n * f.prices.b_p + f.prices.b_pf) - 1)]);
    let start = Call::Start { pk_p: f.p.public(), root: f.mt.root(), theta: 2, n: f.n, prices: f.prices };
    assert!(k.handle(&mut ledger, 0, P, &start, 0).is_err());
}

#[test]
fn start_parameter_checks() {
    let f = Fixture::new(4, 2);
    let mut ledger = Ledger::new([(P, 10_000)]);
    let mut k = Contract::new(Mode::Stream, f.address, TIMERS);
    let mk = |n, theta, prices| Call::Start { pk_p: f.p.public(), root: f.mt.root(), theta, n, prices };
    assert!(matches!(k.handle(&mut ledger, 0, P, &mk(3, 1, f.prices), 0), Err(Reject::BadParameters(_))));
    assert!(matches!(k.handle(&mut ledger, 0, P, &mk(4, 0, f.prices), 0), Err(Reject::BadParameters(_))));
    let flat = Prices { b_p: 10, b_c: 10, b_pf: 1 };
    assert!(matches!(k.handle(&mut ledger, 0, P, &mk(4, 1, flat), 0), Err(Reject::BadParameters(_))));
    assert!(matches!(k.handle(&mut ledger, 0, D, &mk(4, 1, f.prices), 0), Err(Reject::Unauthorized { .. })));
    assert!(k.handle(&mut ledger, 0, P, &mk(4, 1, f.prices), 0).is_ok());
}

#[test]
fn dispute_timeout_with_full_ctr_sells() {
    let mut f = Fixture::new(8, 3);
    let mut ledger = f.ledger();
    let (mut k, _) = f.revealed(&mut ledger, 8);
    let p_before = ledger.balance(P);
    assert_eq!(k.next_deadline(), Some(20));
    assert!(k.tick(&mut ledger, 19).is_empty());
    assert_eq!(k.tick(&mut ledger, 20), vec![Event::Sold]);
    assert_eq!(ledger.balance(P) - p_before, 8 * f.prices.b_c + f.prices.b_pf);
    assert_eq!(k.phase(), Phase::Sold);
    assert_eq!(ledger.escrow(), 0);
    // Completeness deltas.
    assert_eq!(ledger.balance(P), 8 * f.prices.b_c + f.prices.b_pf);
    assert_eq!(ledger.balance(D), 8 * f.prices.b_p);
    assert_eq!(ledger.balance(C), 0);
    assert!(ledger.conserved());
}

#[test]
fn partial_delivery_payout_algebra() {
    let mut f = Fixture::new(8, 4);
    let mut ledger = f.ledger();
    let (mut k, _) = f.revealed(&mut ledger, 5);
    k.tick(&mut ledger, 20);
    let b = f.prices;
    assert_eq!(ledger.balance(D), 5 * b.b_p);
    assert_eq!(ledger.balance(C) as i64 - (8 * b.b_c) as i64, -5 * b.b_c as i64);
    let p_initial = 8 * b.b_p + b.b_pf;
    assert_eq!(ledger.balance(P) as i64 - p_initial as i64, 5 * (b.b_c as i64 - b.b_p as i64));
    assert_eq!(ledger.escrow(), 0);
}

#[test]
fn wrong_rk_with_root_cover_is_rejected() {
    let mut f = Fixture::new(8, 5);
    let mut ledger = f.ledger();
    let (mut k, erk) = f.revealed(&mut ledger, 8);
    assert_eq!(erk.positions(), vec![0]);
    assert_eq!(k.handle(&mut ledger, 13, C, &Call::WrongRk, 0), Err(Reject::RevealSetValid));
    assert_eq!(k.phase(), Phase::Revealed);
}

#[test]
fn short_reveal_lets_wrong_rk_through() {
    let mut f = Fixture::new(8, 6);
    let mut ledger = f.ledger();
    let short = f.kt.reveal(6).unwrap();
    let (mut k, _) = f.revealed_with(&mut ledger, 7, short);
    let ev = k.handle(&mut ledger, 13, C, &Call::WrongRk, 0).unwrap();
    assert_eq!(ev, vec![Event::NotSold]);
    assert_eq!(ledger.balance(C), 8 * f.prices.b_c + f.prices.b_pf);
    assert_eq!(k.sessions()[0].dispute, Some(Dispute::WrongRk));
    assert!(ledger.conserved());
    assert_eq!(ledger.escrow(), 0);
}

#[test]
fn wrong_rk_after_deadline_is_expired() {
    let mut f = Fixture::new(4, 7);
    let mut ledger = f.ledger();
    let short = f.kt.reveal(1).unwrap();
    let (mut k, _) = f.revealed_with(&mut ledger, 4, short);
    assert_eq!(k.handle(&mut ledger, 20, C, &Call::WrongRk, 0), Err(Reject::Expired));
}

#[test]
fn garbage_chunk_pom_is_accepted() {
    let mut f = Fixture::new(8, 8);
    let mut ledger = f.ledger();
    let (mut k, erk) = f.revealed(&mut ledger, 7);
    // Chunk 3 encrypted under the right key but with garbage plaintext.
    let key = f.kt.chunk_key(3).unwrap();
    let bad = SignedChunk::sign(&f.p, &f.cid(), 3, sym_encrypt(&key, &[7u8; 64]).unwrap());
    // Chunk 3 sits at tree index n + 1; find the revealed node covering it.
    let j = erk
        .positions()
        .iter()
        .position(|&x| {
            let (l, r) = crate::keytree::subtree_leaves(8, x).unwrap();
            (l..=r).contains(&(8 + 1))
        })
        .unwrap() as u64;
    assert_eq!(j, 0);
    let pom = f.pom(3, j, bad, &erk);
    let ev = k.handle(&mut ledger, 13, C, &Call::PomDownload(Box::new(pom)), 0).unwrap();
    assert_eq!(ev, vec![Event::NotSold]);
    assert_eq!(ledger.balance(C), 8 * f.prices.b_c + f.prices.b_pf);
    assert_eq!(ledger.balance(D), 7 * f.prices.b_p);
    assert!(ledger.conserved());
}

#[test]
fn honest_chunk_pom_is_rejected() {
    let mut f = Fixture::new(8, 9);
    let mut ledger = f.ledger();
    let (mut k, erk) = f.revealed(&mut ledger, 8);
    let pom = f.pom(3, 0, f.chunk(3), &erk);
    assert_eq!(
        k.handle(&mut ledger, 13, C, &Call::PomDownload(Box::new(pom)), 0),
        Err(Reject::Pom(PomError::ChunkMatches))
    );
}

#[test]
fn pom_citing_unrelated_subtree_is_rejected() {
    let mut f = Fixture::new(8, 10);
    let mut ledger = f.ledger();
    let (mut k, erk) = f.revealed(&mut ledger, 7);
    assert_eq!(erk.positions(), vec![1, 5, 13]);
    let key = f.kt.chunk_key(2).unwrap();
    let bad = SignedChunk::sign(&f.p, &f.cid(), 2, sym_encrypt(&key, &[1u8; 64]).unwrap());
    // Position 13 is leaf 7; it cannot derive chunk 2.
    let pom = f.pom(2, 2, bad, &erk);
    assert_eq!(
        k.handle(&mut ledger, 13, C, &Call::PomDownload(Box::new(pom)), 0),
        Err(Reject::Pom(PomError::KeyNotDerivable { i: 2, j: 2 }))
    );
}

#[test]
fn pom_beyond_paid_range_is_rejected() {
    let mut f = Fixture::new(8, 11);
    let mut ledger = f.ledger();
    let (mut k, erk) = f.revealed(&mut ledger, 4);
    let pom = f.pom(6, 0, f.chunk(6), &erk);
    assert_eq!(
        k.handle(&mut ledger, 13, C, &Call::PomDownload(Box::new(pom)), 0),
        Err(Reject::Pom(PomError::IndexOutOfRange(6)))
    );
}

#[test]
fn missing_proof_yields_zero_ctr_and_full_refunds() {
    let f = Fixture::new(4, 12);
    let mut ledger = f.ledger();
    let mut k = f.initiated(Mode::Download, &mut ledger);
    assert_eq!(k.next_deadline(), Some(3 + TIMERS.deliver));
    assert_eq!(k.tick(&mut ledger, 3 + TIMERS.deliver), vec![Event::GetVfdProof]);
    assert_eq!(k.tick(&mut ledger, 5 + TIMERS.deliver), vec![Event::NotSold]);
    assert_eq!(ledger.balance(P), 4 * f.prices.b_p + f.prices.b_pf);
    assert_eq!(ledger.balance(C), 4 * f.prices.b_c);
    assert_eq!(ledger.escrow(), 0);
}

#[test]
fn forged_vfd_proof_is_rejected_without_state_change() {
    let f = Fixture::new(4, 13);
    let mut ledger = f.ledger();
    let mut k = f.initiated(Mode::Download, &mut ledger);
    k.handle(&mut ledger, 9, C, &Call::Delivered, 0).unwrap();
    // Signed by the deliverer itself.
    let forged = Receipt::sign(&f.d, f.sid(&f.d), 4, &f.d.public());
    let r = k.handle(&mut ledger, 10, D, &Call::VfdProof { receipt: Some(forged) }, 0);
    assert!(matches!(r, Err(Reject::BadReceipt(_))));
    // Replayed from another session nonce.
    let other = session_id(&f.mt.root(), &f.address, &f.d.public(), &f.c.public(), 1);
    let replay = Receipt::sign(&f.c, other, 4, &f.d.public());
    let r = k.handle(&mut ledger, 10, D, &Call::VfdProof { receipt: Some(replay) }, 0);
    assert_eq!(r, Err(Reject::BadReceipt("session id")));
    assert_eq!(k.phase(), Phase::Initiated);
    assert_eq!(k.accepted_calls().len(), 5);
}

#[test]
fn reset_decrements_theta_and_bumps_nonce() {
    let mut f = Fixture::new(4, 14);
    let t = f.prices;
    let mut ledger = Ledger::new([(P, 2 * (4 * t.b_p + t.b_pf)), (C, 4 * t.b_c), (PartyId::Consumer(1), 4 * t.b_c)]);
    let mut k = Contract::new(Mode::Download, f.address, TIMERS);
    let start = Call::Start { pk_p: f.p.public(), root: f.mt.root(), theta: 2, n: 4, prices: t };
    k.handle(&mut ledger, 0, P, &start, 0).unwrap();
    k.handle(&mut ledger, 1, D, &Call::Join { pk_d: f.d.public() }, 0).unwrap();
    k.handle(&mut ledger, 2, D, &Call::Prepared, 0).unwrap();
    k.handle(&mut ledger, 3, C, &Call::Consume { pk_c: f.c.public(), vpk_c: Some(f.vc.public()) }, 0).unwrap();
    k.handle(&mut ledger, 4, C, &Call::Delivered, 0).unwrap();
    k.handle(&mut ledger, 5, D, &Call::VfdProof { receipt: None }, 0).unwrap();
    assert_eq!(k.phase(), Phase::NotSold);
    assert!(matches!(k.handle(&mut ledger, 6, P, &Call::Withdraw, 0), Err(Reject::WrongPhase { .. })));
    k.handle(&mut ledger, 6, P, &Call::Reset, 0).unwrap();
    assert_eq!((k.theta(), k.nonce(), k.phase()), (1, 1, Phase::Ready));
    let c1 = SigKeyPair::generate(&mut f.rng);
    let consume = Call::Consume { pk_c: c1.public(), vpk_c: Some(f.vc.public()) };
    k.handle(&mut ledger, 7, PartyId::Consumer(1), &consume, 0).unwrap();
    assert_eq!(k.accepted_calls().last().unwrap().session, Some(1));
}

#[test]
fn withdraw_returns_unused_portions() {
    let f = Fixture::new(4, 15);
    let t = f.prices;
    let mut ledger = Ledger::new([(P, 3 * (4 * t.b_p + t.b_pf))]);
    let mut k = Contract::new(Mode::Stream, f.address, TIMERS);
    let start = Call::Start { pk_p: f.p.public(), root: f.mt.root(), theta: 3, n: 4, prices: t };
    k.handle(&mut ledger, 0, P, &start, 0).unwrap();
    let ev = k.handle(&mut ledger, 1, P, &Call::Withdraw, 0).unwrap();
    assert_eq!(ev, vec![Event::Withdrawn { amount: 3 * (4 * t.b_p + t.b_pf) }]);
    assert_eq!(ledger.escrow(), 0);
    assert_eq!(k.theta(), 0);
}

fn stream_claim(f: &Fixture, k: &mut Contract, ledger: &mut Ledger, now: u64, who: PartyId, i: u64) -> Handled {
    let (kp, call): (&SigKeyPair, fn(Receipt) -> Call) = match who {
        PartyId::Deliverer => (&f.d, |receipt| Call::ClaimDelivery { receipt }),
        _ => (&f.p, |receipt| Call::ClaimRevealing { receipt }),
    };
    let receipt = Receipt::sign(&f.c, f.sid(kp), i, &kp.public());
    k.handle(ledger, now, who, &call(receipt), 0)
}

#[test]
fn stream_finish_takes_max_claim() {
    let f = Fixture::new(8, 16);
    let mut ledger = f.ledger();
    let mut k = f.initiated(Mode::Stream, &mut ledger);
    k.handle(&mut ledger, 10, C, &Call::Received, 0).unwrap();
    stream_claim(&f, &mut k, &mut ledger, 11, D, 5).unwrap();
    stream_claim(&f, &mut k, &mut ledger, 11, P, 4).unwrap();
    assert_eq!(k.claims(), (5, 4));
    assert_eq!(k.tick(&mut ledger, 3 + TIMERS.finish), vec![Event::Sold]);
    assert_eq!(k.ctr(), 5);
    let b = f.prices;
    assert_eq!(ledger.balance(D), 5 * b.b_p);
    assert_eq!(ledger.balance(C), 3 * b.b_c);
    assert_eq!(ledger.balance(P), 3 * b.b_p + 5 * b.b_c + b.b_pf);
    assert!(ledger.conserved());
}

#[test]
fn stream_penalty_payout() {
    let f = Fixture::new(8, 17);
    let mut ledger = f.ledger();
    let mut k = f.initiated(Mode::Stream, &mut ledger);
    // Provider signs a wrong key for chunk 4.
    let wrong = SymKey([9u8; 32]);
    let sid = f.sid(&f.p);
    let pom = PomStream {
        i: 4,
        chunk: f.chunk(4),
        key: wrong,
        key_sig: f.p.sign(&key_reveal_message(&sid, 4, &wrong)),
        leaf: f.mt.leaf(4).unwrap(),
        mtp: f.mt.gen_proof(4).unwrap(),
    };
    assert_eq!(k.handle(&mut ledger, 20, C, &Call::PomStream(Box::new(pom)), 0).unwrap(), vec![Event::Received]);
    assert!(k.plt());
    stream_claim(&f, &mut k, &mut ledger, 21, D, 3).unwrap();
    stream_claim(&f, &mut k, &mut ledger, 21, P, 3).unwrap();
    k.tick(&mut ledger, 3 + TIMERS.finish);
    let b = f.prices;
    assert_eq!(ledger.balance(C), 5 * b.b_c + b.b_pf);
    assert_eq!(ledger.balance(P), 5 * b.b_p + 3 * b.b_c);
    assert_eq!(ledger.balance(D), 3 * b.b_p);
    assert!(ledger.conserved());
    assert!(k.sessions()[0].plt);
}

#[test]
fn stream_pom_with_correct_key_is_rejected() {
    let f = Fixture::new(4, 18);
    let mut ledger = f.ledger();
    let mut k = f.initiated(Mode::Stream, &mut ledger);
    let key = f.kt.chunk_key(2).unwrap();
    let sid = f.sid(&f.p);
    let pom = PomStream {
        i: 2,
        chunk: f.chunk(2),
        key,
        key_sig: f.p.sign(&key_reveal_message(&sid, 2, &key)),
        leaf: f.mt.leaf(2).unwrap(),
        mtp: f.mt.gen_proof(2).unwrap(),
    };
    assert_eq!(
        k.handle(&mut ledger, 5, C, &Call::PomStream(Box::new(pom.clone())), 0),
        Err(Reject::Pom(PomError::ChunkMatches))
    );
    // A key signed by someone else is no evidence against the provider.
    let forged = PomStream { key: SymKey([1; 32]), key_sig: f.d.sign(&key_reveal_message(&sid, 2, &SymKey([1; 32]))), ..pom };
    assert_eq!(
        k.handle(&mut ledger, 5, C, &Call::PomStream(Box::new(forged)), 0),
        Err(Reject::Pom(PomError::BadKeySignature))
    );
    assert!(!k.plt());
}

#[test]
fn claim_delivery_bound_to_provider_is_rejected() {
    let f = Fixture::new(4, 19);
    let mut ledger = f.ledger();
    let mut k = f.initiated(Mode::Stream, &mut ledger);
    k.handle(&mut ledger, 10, C, &Call::Received, 0).unwrap();
    // Receipt issued to P, submitted by D.
    let to_p = Receipt::sign(&f.c, f.sid(&f.d), 4, &f.p.public());
    let r = k.handle(&mut ledger, 11, D, &Call::ClaimDelivery { receipt: to_p }, 0);
    assert_eq!(r, Err(Reject::BadReceipt("signature")));
    assert_eq!(k.claims(), (0, 0));
}

#[test]
fn claims_are_monotone() {
    let f = Fixture::new(8, 20);
    let mut ledger = f.ledger();
    let mut k = f.initiated(Mode::Stream, &mut ledger);
    // Before any end-of-stream signal only a full claim is admissible.
    assert!(matches!(stream_claim(&f, &mut k, &mut ledger, 5, D, 3), Err(Reject::WrongPhase { .. })));
    stream_claim(&f, &mut k, &mut ledger, 5, D, 8).unwrap();
    assert!(stream_claim(&f, &mut k, &mut ledger, 6, D, 8).is_err());
    stream_claim(&f, &mut k, &mut ledger, 6, P, 2).unwrap();
    stream_claim(&f, &mut k, &mut ledger, 7, P, 6).unwrap();
    assert_eq!(stream_claim(&f, &mut k, &mut ledger, 8, P, 5), Err(Reject::BadReceipt("not above the recorded claim")));
    assert_eq!(k.claims(), (8, 6));
    assert_eq!(stream_claim(&f, &mut k, &mut ledger, 3 + TIMERS.finish, P, 7), Err(Reject::Expired));
}

#[test]
fn no_claims_means_not_sold_and_refunds() {
    let f = Fixture::new(4, 21);
    let mut ledger = f.ledger();
    let mut k = f.initiated(Mode::Stream, &mut ledger);
    assert_eq!(k.tick(&mut ledger, 3 + TIMERS.receive), vec![Event::Received]);
    assert_eq!(k.tick(&mut ledger, 3 + TIMERS.finish), vec![Event::NotSold]);
    assert_eq!(ledger.balance(C), 4 * f.prices.b_c);
    assert_eq!(ledger.balance(P), 4 * f.prices.b_p + f.prices.b_pf);
}

#[test]
fn mint_fault_breaks_conservation() {
    let mut f = Fixture::new(4, 22);
    let mut ledger = f.ledger();
    let (mut k, _) = f.revealed(&mut ledger, 4);
    k.fault = Fault::MintOnPayout;
    k.tick(&mut ledger, 20);
    assert!(!ledger.conserved());
    assert_eq!(ledger.total(), f.supply() + 1);
}

#[test]
fn no_event_or_log_entry_on_rejection() {
    let f = Fixture::new(4, 23);
    let mut ledger = f.ledger();
    let mut k = f.initiated(Mode::Download, &mut ledger);
    let before = (k.accepted_calls().len(), ledger.clone(), k.phase());
    assert!(k.handle(&mut ledger, 5, D, &Call::Delivered, 0).is_err());
    assert!(k.handle(&mut ledger, 5, C, &Call::Received, 0).is_err());
    assert!(k.handle(&mut ledger, 5, P, &Call::Reset, 0).is_err());
    assert_eq!(before, (k.accepted_calls().len(), ledger, k.phase()));
}

/// Allowed phase edges, written independently of the reducer.
fn allowed_edge(mode: Mode, from: Phase, to: Phase) -> bool {
    use Phase::*;
    if from == to {
        return true;
    }
    let common = matches!(
        (from, to),
        (Empty, Started) | (Started, Joined) | (Joined, Ready) | (Ready, Initiated) | (Sold | NotSold, Ready)
    );
    common
        || match mode {
            Mode::Download => matches!(
                (from, to),
                (Initiated, Revealing | NotSold) | (Revealing, Revealed | NotSold) | (Revealed, Sold | NotSold)
            ),
            Mode::Stream => matches!(
                (from, to),
                (Initiated | Received | PayingDelivery | PayingRevealing, Received | PayingDelivery | PayingRevealing | Sold | NotSold)
            ),
        }
}

fn random_call(f: &mut Fixture, erk: &EncryptedRevealSet) -> Call {
    let i = f.rng.gen_range(0..=f.n + 1);
    let signer = match f.rng.gen_range(0..3) {
        0 => &f.c,
        1 => &f.d,
        _ => &f.p,
    };
    let pk_s = if f.rng.gen() { f.d.public() } else { f.p.public() };
    let sid = if f.rng.gen() { session_id(&f.mt.root(), &f.address, &pk_s, &f.c.public(), 0) } else { hash(b"x") };
    let receipt = Receipt::sign(signer, sid, i, &pk_s);
    match f.rng.gen_range(0..15) {
        0 => Call::Start { pk_p: f.p.public(), root: f.mt.root(), theta: f.rng.gen_range(1..3), n: f.n, prices: f.prices },
        1 => Call::Join { pk_d: f.d.public() },
        2 => Call::Prepared,
        3 => Call::Consume { pk_c: f.c.public(), vpk_c: Some(f.vc.public()) },
        4 => Call::Delivered,
        5 => Call::VfdProof { receipt: f.rng.gen::<bool>().then_some(receipt) },
        6 => Call::RevealKeys { erk: erk.clone() },
        7 => Call::WrongRk,
        8 => {
            let i = f.rng.gen_range(1..=f.n);
            let j = f.rng.gen_range(0..erk.len() as u64);
            let chunk = f.chunk(i);
            Call::PomDownload(Box::new(f.pom(i, j, chunk, erk)))
        }
        9 => Call::Received,
        10 => {
            let i = f.rng.gen_range(1..=f.n);
            let key = SymKey::random(&mut f.rng);
            Call::PomStream(Box::new(PomStream {
                i,
                chunk: f.chunk(i),
                key,
                key_sig: f.p.sign(&key_reveal_message(&sid, i, &key)),
                leaf: f.mt.leaf(i).unwrap(),
                mtp: f.mt.gen_proof(i).unwrap(),
            }))
        }
        11 => Call::ClaimDelivery { receipt },
        12 => Call::ClaimRevealing { receipt },
        13 => Call::Reset,
        _ => Call::Withdraw,
    }
}

#[test]
fn fuzzed_calls_keep_conservation_and_edges() {
    for seed in 0..24u64 {
        let mut f = Fixture::new(4, 100 + seed);
        let mode = if seed % 2 == 0 { Mode::Download } else { Mode::Stream };
        let erk = f.kt.reveal(f.rng.gen_range(1..=4)).unwrap().encrypt(&f.vc.public(), &mut f.rng).unwrap();
        let t = f.prices;
        let mut ledger = Ledger::new([
            (P, 2 * (4 * t.b_p + t.b_pf)),
            (C, 8 * t.b_c),
            (PartyId::Consumer(1), 8 * t.b_c),
        ]);
        let mut k = Contract::new(mode, f.address, TIMERS);
        let parties = [P, D, C, PartyId::Consumer(1)];
        for now in 0..300u64 {
            let before = k.phase();
            for ev in k.tick(&mut ledger, now) {
                let _ = ev;
            }
            assert!(allowed_edge(mode, before, k.phase()), "tick {before:?} -> {:?}", k.phase());
            let call = random_call(&mut f, &erk);
            let from = parties[f.rng.gen_range(0..parties.len())];
            let before = k.phase();
            let snapshot = ledger.clone();
            match k.handle(&mut ledger, now, from, &call, 0) {
                Ok(_) => assert!(allowed_edge(mode, before, k.phase()), "{} {before:?} -> {:?}", call.name(), k.phase()),
                Err(_) => {
                    assert_eq!(k.phase(), before);
                    assert_eq!(ledger, snapshot);
                }
            }
            assert!(ledger.conserved());
            assert!(k.ctr() <= f.n);
        }
    }
}

#[test]
fn revealed_key_values_do_not_reach_the_contract() {
    // The contract stores positions and a digest only.
    let mut f = Fixture::new(8, 24);
    let mut ledger = f.ledger();
    let rk = RevealSet { elements: vec![RevealedKey { position: 0, value: f.kt.nodes()[0] }] };
    let (k, erk) = f.revealed_with(&mut ledger, 8, rk);
    assert_eq!(k.session.as_ref().unwrap().erk_positions, vec![0]);
    assert_eq!(k.session.as_ref().unwrap().erk_hash, Some(erk.digest()));
}
