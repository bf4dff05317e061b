use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ganblend_core::projector::{ProjectionConfig, Projector};
use ganblend_core::sampling::{sample_images, SampleGridSpec};
use ganblend_core::{forward, init_random, ExecMode, GeneratorConfig, NoiseSpec};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn gradient(c: &mut Criterion) {
    let base = init_random(&GeneratorConfig::desk(), 0);
    let target = forward(&base, &[0.25; 64], NoiseSpec::new(0)).unwrap();
    let mut group = c.benchmark_group("fd_gradient");
    group.sample_size(10);
    for (label, exec) in MODES {
        let cfg = ProjectionConfig {
            exec,
            ..ProjectionConfig::default()
        };
        let p = Projector::new(&base, &target, &cfg).unwrap();
        group.bench_function(BenchmarkId::from_parameter(label), |b| b.iter(|| p.gradient().unwrap()));
    }
    group.finish();
}

fn sample_grid(c: &mut Criterion) {
    let base = init_random(&GeneratorConfig::desk(), 0);
    let spec = SampleGridSpec::default();
    let mut group = c.benchmark_group("sample_24");
    group.sample_size(10);
    for (label, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| sample_images(&base, &spec, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gradient, sample_grid);
criterion_main!(benches);
