use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hcl_bench::{compact_model, scene};
use hcl_core::data::evaluate_metrics;
use hcl_core::pipeline::{tta_adapt, AdaptationConfig, HclConfig};
use hcl_core::spectral::{dft2, idft2};
use hcl_core::Tensor;

fn spectral(c: &mut Criterion) {
    let mut g = c.benchmark_group("dft2");
    for size in [64, 128, 256] {
        let img = scene(size, 1);
        g.bench_with_input(BenchmarkId::new("forward", size), &img, |b, img| {
            b.iter(|| dft2(black_box(img)).unwrap())
        });
        let spec = dft2(&img).unwrap();
        g.bench_with_input(BenchmarkId::new("round_trip", size), &spec, |b, spec| {
            b.iter(|| idft2(black_box(spec)))
        });
    }
    g.finish();
}

fn convolution(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    for (channels, size) in [(16, 64), (32, 32), (64, 16)] {
        let x = Tensor::from_fn([channels, size, size], |i| ((i * 7919) % 101) as f64 / 101.0);
        let w = Tensor::from_fn([channels, channels, 3, 3], |i| ((i * 31) % 17) as f64 / 17.0 - 0.5);
        g.bench_function(format!("{channels}x{size}x{size}"), |b| {
            b.iter(|| black_box(&x).conv2d(&w, None, 1, 1).unwrap())
        });
    }
    g.finish();
}

fn adaptation(c: &mut Criterion) {
    let mut model = compact_model();
    let img = scene(64, 2);
    let hcl = HclConfig::default();
    let cfg = AdaptationConfig {
        iterations: 1,
        ..AdaptationConfig::default()
    };
    let mut g = c.benchmark_group("tta");
    g.sample_size(10);
    g.bench_function("one_iteration_64", |b| {
        b.iter(|| tta_adapt(&mut model, black_box(&img), &hcl, &cfg).unwrap())
    });
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let (img, gt) = hcl_core::data::gen_scene(&hcl_core::data::SceneSpec::new(256, 0.7, 3)).unwrap();
    let pred = Tensor::from_fn([256, 256], |i| img.data()[i]);
    c.bench_function("metrics_256", |b| b.iter(|| evaluate_metrics(black_box(&pred), &gt).unwrap()));
}

criterion_group!(benches, spectral, convolution, adaptation, metrics);
criterion_main!(benches);
