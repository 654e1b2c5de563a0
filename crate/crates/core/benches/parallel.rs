use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trackcentre::constraints::derive_cannot_links;
use trackcentre::encoder::{EncoderConfig, EncoderParams};
use trackcentre::par::ExecMode;
use trackcentre::trackio::{generate_synthetic, SyntheticSpec};
use trackcentre::vcl::{eval_representations, train, CentreTable, TrainConfig};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn bench(c: &mut Criterion) {
    let set = generate_synthetic(&SyntheticSpec {
        tracks_per_identity: 8,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let links = derive_cannot_links(&set);
    let enc = EncoderConfig::new(32, 2, 4, 2).unwrap();
    let params = EncoderParams::init(&enc, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();

    let mut group = c.benchmark_group("centre_recompute");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| CentreTable::full(&params, &set, mode).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("eval_representations");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| eval_representations(&params, &set, mode).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("train_two_epochs");
    group.sample_size(10);
    for (name, mode) in MODES {
        let cfg = TrainConfig {
            epochs: 2,
            warmup_epochs: 1,
            exec: mode,
            ..TrainConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train(&set, &links, &enc, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
