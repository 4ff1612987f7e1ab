//! Data-parallel helpers against the same code pinned to one thread.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gcspn_core::geometry::{knn, Point3};
use gcspn_core::grid::CameraIntrinsics;
use gcspn_core::learning::{idw_fill, predict, train, Model, Sample, TrainConfig};
use gcspn_core::par;
use gcspn_core::propagation::PropagationConfig;
use gcspn_core::rng::Rng;
use gcspn_core::synth::{render_scene, sample_sparse, SceneSpec};
use std::hint::black_box;

fn scene(seed: u64, size: usize, samples: usize) -> Sample {
    let intr = CameraIntrinsics::centered(size, size, 0.9 * size as f64);
    let spec = SceneSpec::random(seed, size, size, intr, 1.0, 8.0).unwrap();
    let (gt, gray) = render_scene(&spec).unwrap();
    let sparse = sample_sparse(&gt, samples, seed).unwrap();
    Sample::new("bench", gt, Some(gray), sparse, intr).unwrap()
}

fn both<F: Fn() + Sync + Send>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("parallel", ""), |b| b.iter(&f));
    g.bench_function(BenchmarkId::new("sequential", ""), |b| par::sequential(|| b.iter(&f)));
    g.finish();
}

fn benches(c: &mut Criterion) {
    let mut rng = Rng::new(3);
    let pts: Vec<Point3> = (0..1024)
        .map(|_| Point3::new(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(1.0, 8.0)))
        .collect();
    both(c, "knn_1024_k8", || {
        black_box(knn(&pts, 8).unwrap());
    });

    let s = scene(1, 64, 300);
    both(c, "idw_64x64", || {
        black_box(idw_fill(&s.sparse).unwrap());
    });

    let prop = PropagationConfig::default();
    let model = Model::random(0, prop.patch_h, prop.patch_w, prop.scale).unwrap();
    both(c, "predict_64x64_3_steps", || {
        black_box(predict(&model, &s, &prop).unwrap());
    });

    let data: Vec<Sample> = (0..4).map(|i| scene(10 + i, 32, 120)).collect();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    both(c, "train_epoch_4x32x32", || {
        black_box(train(&data, &cfg, &prop).unwrap());
    });
}

criterion_group!(propagation, benches);
criterion_main!(propagation);
