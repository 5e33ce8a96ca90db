//! Criterion benchmarks for the pipeline's hot operations at desk scale.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hdrfuse::data::synth::{synthesize_scene, MotionModel, SyntheticSpec};
use hdrfuse::models::{build_model, ModelSpec, NetworkInput};
use hdrfuse::radiometry::{fuse_color, linearize, tonemap, RadiometryConfig};
use hdrfuse::{FlowEstimatorSpec, FlowField};

fn bench_radiometry(c: &mut Criterion) {
    let cfg = RadiometryConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = Array3::from_shape_fn((128, 128, 3), |_| rng.gen_range(0.0..1.0));

    c.bench_function("tonemap_128", |b| {
        b.iter(|| tonemap(black_box(&img), &cfg).unwrap())
    });

    let scene = synthesize_scene(
        &SyntheticSpec { size: 128, seed: 2, ..SyntheticSpec::default() },
        &cfg,
    )
    .unwrap()
    .scene;
    let ev = scene.frames[1].ev;
    let h1 = linearize(&scene.frames[0], ev, &cfg).unwrap();
    let h2 = linearize(&scene.frames[1], ev, &cfg).unwrap();
    let h3 = linearize(&scene.frames[2], ev, &cfg).unwrap();
    c.bench_function("fuse_color_128", |b| {
        b.iter(|| fuse_color(black_box(&h1), &h2, &h3, &scene.frames[1]).unwrap())
    });
}

fn bench_alignment(c: &mut Criterion) {
    let cfg = RadiometryConfig::default();
    let scene = synthesize_scene(
        &SyntheticSpec {
            size: 128,
            seed: 3,
            motion: MotionModel::GlobalShift { dx: 3, dy: 1 },
            ..SyntheticSpec::default()
        },
        &cfg,
    )
    .unwrap()
    .scene;
    let spec = FlowEstimatorSpec::default();
    let compensated =
        hdrfuse::alignment::exposure_compensate(&scene.frames[0], scene.frames[1].ev, &cfg)
            .unwrap();
    c.bench_function("estimate_flow_128", |b| {
        b.iter(|| {
            hdrfuse::alignment::estimate_flow(black_box(&scene.frames[1]), &compensated, &spec)
                .unwrap()
        })
    });

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut flow = FlowField::zeros(128, 128);
    for v in flow.vectors.iter_mut() {
        *v = rng.gen_range(-3.0..3.0);
    }
    c.bench_function("warp_128", |b| {
        b.iter(|| hdrfuse::alignment::warp(black_box(&scene.frames[0].pixels), &flow).unwrap())
    });
}

fn bench_model(c: &mut Criterion) {
    let model = build_model(&ModelSpec { param_seed: 5, ..ModelSpec::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mk = |rng: &mut ChaCha8Rng| Array3::from_shape_fn((64, 64, 3), |_| rng.gen_range(0.0..1.0));
    let frames: Vec<(Array3<f64>, Array3<f64>)> =
        (0..3).map(|_| (mk(&mut rng), mk(&mut rng))).collect();
    let input = NetworkInput::from_pairs([
        (&frames[0].0, &frames[0].1),
        (&frames[1].0, &frames[1].1),
        (&frames[2].0, &frames[2].1),
    ])
    .unwrap();

    c.bench_function("model_forward_w8_64", |b| {
        b.iter(|| model.forward(black_box(&input)).unwrap())
    });
    c.bench_function("model_forward_backward_w8_64", |b| {
        b.iter(|| {
            let cache = model.forward_cached(black_box(&input));
            let grad = hdrfuse::nn::Tensor::from_elem(cache.y.dim(), 1.0 / cache.y.len() as f64);
            model.backward(&cache, &grad)
        })
    });
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = Array3::from_shape_fn((128, 128, 3), |_| rng.gen_range(0.0..1.0));
    let b_img = Array3::from_shape_fn((128, 128, 3), |_| rng.gen_range(0.0..1.0));
    c.bench_function("ssim_128", |b| {
        b.iter(|| hdrfuse::metrics::ssim(black_box(&a), &b_img).unwrap())
    });
}

criterion_group!(benches, bench_radiometry, bench_alignment, bench_model, bench_metrics);
criterion_main!(benches);
