use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand_distr::StandardNormal;
use sda_core::data::BatchSampler;
use sda_core::features::{extract, AudioClip, MelSpectrogram, NormStats};
use sda_core::seeding::stream;
use sda_core::training::{d_phase, g_phase, ModelKind, TrainConfig, TrainState};
use sda_core::{MelConfig, ModelPair, Side, UNetGenerators};

fn noise_corpus(rng: &mut impl Rng, n: usize) -> Vec<MelSpectrogram> {
    (0..n)
        .map(|_| {
            let v = (0..98 * 80).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            MelSpectrogram::new(98, 80, v, true).unwrap()
        })
        .collect()
}

fn features(c: &mut Criterion) {
    let samples: Vec<f32> = (0..16_000).map(|i| (0.3 * (i as f64 * 0.07).sin()) as f32).collect();
    let clip = AudioClip::new(samples, 16_000).unwrap();
    let cfg = MelConfig::default();
    c.bench_function("extract_1s", |b| b.iter(|| extract(black_box(&clip), &cfg).unwrap()));
}

fn inference(c: &mut Criterion) {
    let mut rng = stream(0, "bench/inference");
    let corpus = noise_corpus(&mut rng, 1);
    let segs = sda_core::training::corpus_segments(&corpus).unwrap();
    let pair = ModelPair::<f32>::new(&mut rng).unwrap();
    let code = pair.mean_domain_code(&segs, Side::A).unwrap();
    c.bench_function("proposed_translate_1s", |b| {
        b.iter(|| pair.translate_segments(black_box(&segs), Side::B, &code).unwrap())
    });
    let unet = UNetGenerators::<f32>::new(&mut rng).unwrap();
    c.bench_function("baseline_generate_1s", |b| {
        b.iter(|| unet.generate_segments(black_box(&segs), Side::B).unwrap())
    });
}

fn training_step(c: &mut Criterion) {
    let mut rng = stream(0, "bench/step");
    let sampler = BatchSampler::new(noise_corpus(&mut rng, 4), noise_corpus(&mut rng, 4), 2).unwrap();
    let stats = NormStats::new(vec![0.0; 80], vec![1.0; 80]).unwrap();
    let mut group = c.benchmark_group("train_step_batch2");
    group.sample_size(10);
    for kind in [ModelKind::Proposed, ModelKind::CycleganBaseline] {
        let cfg = TrainConfig { model: kind, batch_size: 2, ..TrainConfig::default() };
        let mut st = TrainState::init(&cfg, stats.clone()).unwrap();
        group.bench_function(kind.to_string(), |b| {
            b.iter(|| {
                let (x_a, x_b) = sampler.sample_batch(&mut st.data_rng);
                d_phase(&mut st, &x_a, &x_b).unwrap();
                g_phase(&mut st, &x_a, &x_b).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, features, inference, training_step);
criterion_main!(benches);
