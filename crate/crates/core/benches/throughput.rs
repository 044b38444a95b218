use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fairdeliver::crypto::{hash, SigKeyPair, SymKey};
use fairdeliver::keytree::KeyTree;
use fairdeliver::par::{self, Exec};
use fairdeliver::protocols::prepare_chunks;
use fairdeliver::vfd::SignedChunk;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn setup(n: u64, eta: usize) -> (SigKeyPair, KeyTree, Vec<Vec<u8>>) {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let keys = SigKeyPair::generate(&mut rng);
    let kt = KeyTree::generate(n, &SymKey::random(&mut rng)).expect("power of two");
    let content = (0..n)
        .map(|_| {
            let mut c = vec![0u8; eta];
            rng.fill_bytes(&mut c);
            c
        })
        .collect();
    (keys, kt, content)
}

fn bench_prepare(c: &mut Criterion) {
    let cid = hash(b"bench");
    let mut group = c.benchmark_group("prepare_chunks");
    group.sample_size(10);
    for (n, eta) in [(64u64, 1024usize), (256, 1024)] {
        let (keys, kt, content) = setup(n, eta);
        group.throughput(Throughput::Bytes(n * eta as u64));
        for exec in [Exec::Sequential, Exec::Parallel] {
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), n), &n, |b, _| {
                b.iter(|| black_box(prepare_chunks(exec, &keys, &cid, &kt, &content, &[])))
            });
        }
    }
    group.finish();
}

fn bench_verify(c: &mut Criterion) {
    let cid = hash(b"bench");
    let (keys, kt, content) = setup(256, 1024);
    let chunks: Vec<SignedChunk> = prepare_chunks(Exec::Parallel, &keys, &cid, &kt, &content, &[]).to_vec();
    let pk = keys.public();
    let mut group = c.benchmark_group("verify_sell");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| black_box(par::map_with(exec, &chunks, |ch| ch.is_valid(&pk, &cid))))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_prepare, bench_verify);
criterion_main!(benches);
