use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use sp2p_core::digest::{parameterized_digest, DigestParams};
use sp2p_core::harness::{run_campaign, run_campaign_serial, ScenarioKind};
use sp2p_core::harness::synthetic_store;
use sp2p_core::par;

fn random_params(rng: &mut ChaCha20Rng) -> DigestParams {
    let mut p = DigestParams::IDENTITY;
    for w in p.iv.iter_mut() {
        *w = rng.next_u32();
    }
    for m in p.round_masks.iter_mut() {
        *m = rng.next_u32();
    }
    rng.fill_bytes(&mut p.out_mask);
    p
}

fn digest_sweep(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(0xbe0c);
    let params = random_params(&mut rng);
    let messages: Vec<Vec<u8>> = (0..64)
        .map(|_| {
            let mut m = vec![0u8; 256 * 1024];
            rng.fill_bytes(&mut m);
            m
        })
        .collect();
    let total: u64 = messages.iter().map(|m| m.len() as u64).sum();

    let mut group = c.benchmark_group("digest_sweep");
    group.throughput(Throughput::Bytes(total));
    group.bench_with_input(BenchmarkId::new("sequential", messages.len()), &messages, |b, ms| {
        b.iter(|| par::map_sequential(black_box(ms), |m| parameterized_digest(&params, m)))
    });
    #[cfg(feature = "parallel")]
    group.bench_with_input(BenchmarkId::new("parallel", messages.len()), &messages, |b, ms| {
        b.iter(|| par::map_parallel(black_box(ms), |m| parameterized_digest(&params, m)))
    });
    group.finish();
}

fn campaign(c: &mut Criterion) {
    let store = synthetic_store(0xabc);
    let counts: Vec<(ScenarioKind, u32)> = ScenarioKind::ALL.iter().map(|k| (*k, 8)).collect();

    let mut group = c.benchmark_group("campaign");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| run_campaign_serial(black_box(&store), &counts, 7))
    });
    group.bench_function("parallel", |b| {
        b.iter(|| run_campaign(black_box(&store), &counts, 7))
    });
    group.finish();
}

criterion_group!(benches, digest_sweep, campaign);
criterion_main!(benches);
