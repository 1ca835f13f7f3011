use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use branchtrace::filters::{distance_transform, gaussian_smooth, structure_tensor_directions};
use branchtrace::metrics::evaluate;
use branchtrace::raster::{rasterize_with, RasterConfig};
use branchtrace::synth::{synthesize_with, SynthConfig};
use branchtrace::Exec;

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn scene_cfg(seed: u64) -> SynthConfig {
    SynthConfig {
        rng_seed: seed,
        noise_sigma: 0.1,
        ..SynthConfig::default()
    }
}

fn kernels(c: &mut Criterion) {
    let scene = synthesize_with::<3>(&scene_cfg(0), Exec::Parallel).expect("scene");
    let dims = *scene.intensity.dims();
    let mask = scene.labels.boundary.clone();
    let smoothed = gaussian_smooth(&scene.intensity, 1.0, Exec::Parallel);

    let mut g = c.benchmark_group("rasterize");
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rasterize_with(black_box(&scene.forest), dims, &RasterConfig::default(), exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("gaussian_smooth");
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| gaussian_smooth(black_box(&scene.intensity), 1.0, exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("distance_transform");
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| distance_transform(black_box(&mask), exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("structure_tensor");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| structure_tensor_directions(black_box(&smoothed), &mask, exec))
        });
    }
    g.finish();
}

fn batch_eval(c: &mut Criterion) {
    let forests: Vec<_> = (0..8)
        .map(|s| synthesize_with::<3>(&scene_cfg(s), Exec::Parallel).expect("scene").forest)
        .collect();
    let cfg = Default::default();
    let mut g = c.benchmark_group("batch_evaluate");
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map(forests.len(), |i| {
                    let j = (i + 1) % forests.len();
                    evaluate(&forests[i], &forests[j], &cfg).expect("evaluate").len_f1
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, kernels, batch_eval);
criterion_main!(benches);
