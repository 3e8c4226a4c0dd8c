//! Sequential versus rayon throughput for batch generation and omega sweeps.
//!
//! `jobs = 1` always takes the sequential path; `jobs = 0` uses one worker per
//! core when the `parallel` feature is on and falls back to sequential otherwise.

use std::hint::black_box;

use airdecode::diagnostics::{omega_sweep, SweepSettings};
use airdecode::toy::{ToyCorpus, ToyCorpusConfig, PROMPTS};
use airdecode::*;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn fixture() -> (AttributeEnsemble, NGramModel) {
    let cfg = ToyCorpusConfig {
        docs_per_class: 1000,
        ..Default::default()
    };
    let corpus = ToyCorpus::generate(&cfg);
    let ensemble =
        AttributeEnsemble::build(&corpus.labeled(), None, &EnsembleConfig::with_order(3)).unwrap();
    let eval = NGramModel::train_texts(
        &corpus.all_docs(),
        &TokenizerConfig::default(),
        3,
        Smoothing::for_order(3),
    )
    .unwrap();
    (ensemble, eval)
}

fn preset() -> AttributePreset {
    let mut p = AttributePreset::named("sentiment").unwrap();
    p.length = 30;
    p
}

fn bench_generate_batch(c: &mut Criterion) {
    let (ensemble, _) = fixture();
    let requests: Vec<GenerationRequest> = (0..64)
        .map(|i| GenerationRequest {
            prompt: PROMPTS[i % PROMPTS.len()].to_string(),
            target: if i % 2 == 0 { "positive" } else { "negative" }.to_string(),
        })
        .collect();
    let config = GenerationConfig::from_preset(&preset(), CompositionMode::Reconstructed);

    let mut group = c.benchmark_group("generate_batch");
    group.throughput(Throughput::Elements(requests.len() as u64));
    for (name, jobs) in [("sequential", 1), ("parallel", 0)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| black_box(generate_batch(&ensemble, &requests, &config, 5, jobs)))
        });
    }
    group.finish();
}

fn bench_omega_sweep(c: &mut Criterion) {
    let (ensemble, eval) = fixture();
    let mut group = c.benchmark_group("omega_sweep");
    group.sample_size(10);
    for (name, jobs) in [("sequential", 1), ("parallel", 0)] {
        let settings = SweepSettings {
            prompts: PROMPTS.iter().map(|s| s.to_string()).collect(),
            targets: vec!["positive".into(), "negative".into()],
            omegas: vec![0.0, 70.0, 140.0],
            modes: CompositionMode::ALL.to_vec(),
            samples_per_point: 8,
            preset: preset(),
            overlap_k: 20,
            seed: 3,
            jobs,
        };
        group.bench_function(name, |b| {
            b.iter(|| black_box(omega_sweep(&ensemble, &eval, &settings).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_generate_batch, bench_omega_sweep);
criterion_main!(benches);
