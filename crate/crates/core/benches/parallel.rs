//! Sequential vs parallel execution of the data-parallel paths: matrix
//! products, batched classification and independent ablation runs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use icis::data::{synth_generate, SynthConfig};
use icis::eval::classify_with;
use icis::experiments::{ablate_rows, AblationRow, ZslDataset};
use icis::{Execution, Rng, TrainConfig};

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256, 512] {
        let mut rng = Rng::new(0);
        let a = rng.rand_normal(n, n, 1.0);
        let b = rng.rand_normal(n, n, 1.0);
        for (name, exec) in POLICIES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |bench, _| {
                bench.iter(|| black_box(a.matmul_with(&b, exec).unwrap()))
            });
        }
    }
    group.finish();
}

fn classify(c: &mut Criterion) {
    let data = synth_generate(&SynthConfig {
        n_seen: 200,
        n_unseen: 50,
        weight_dim: 256,
        samples_per_class: 20,
        ..SynthConfig::default()
    })
    .unwrap();
    let head = data.oracle_head();
    let mut group = c.benchmark_group("classify");
    for (name, exec) in POLICIES {
        group.bench_function(name, |bench| {
            bench.iter(|| black_box(classify_with(&head, &data.features.features, exec).unwrap()))
        });
    }
    group.finish();
}

fn ablation(c: &mut Criterion) {
    let data = synth_generate(&SynthConfig {
        n_seen: 40,
        n_unseen: 10,
        samples_per_class: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = ZslDataset::from_synth(&data).unwrap();
    let mut cfg = TrainConfig {
        hidden_dim: 64,
        max_epochs: 30,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 1e-3;
    let mut group = c.benchmark_group("ablation");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |bench| {
            bench.iter(|| black_box(ablate_rows(&ds, &AblationRow::ALL, &cfg, None, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, classify, ablation);
criterion_main!(benches);
