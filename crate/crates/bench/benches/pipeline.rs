use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use image::{Rgb, RgbImage};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scfa_core::{
    aggregate_to_grid, scfa_loss_grad, EmbeddingBatch, EncoderConfig, GridLayout, Model,
};
use std::hint::black_box;

fn random_batch(videos: usize, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingBatch {
    let z1 = Array2::from_shape_fn((videos, dim), |_| rng.random_range(-1.0..1.0));
    let z2 = Array2::from_shape_fn((videos, dim), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..videos).map(|j| j % 4).collect();
    let ids: Vec<String> = (0..videos).map(|j| format!("v{j}")).collect();
    EmbeddingBatch::from_views(z1.view(), z2.view(), &labels, &ids).unwrap()
}

fn loss_grad(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("loss_grad");
    for videos in [16usize, 64, 128] {
        let batch = random_batch(videos, 128, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(videos), &batch, |b, batch| {
            b.iter(|| scfa_loss_grad(black_box(batch), 0.07).unwrap())
        });
    }
    group.finish();
}

fn aggregation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("aggregate_to_grid");
    for (name, layout) in [
        ("4x4_8px", GridLayout::new(4, 4, 8, 8).unwrap()),
        ("4x4_56px", GridLayout::reference_224()),
    ] {
        let frames: Vec<RgbImage> = (0..16)
            .map(|_| {
                RgbImage::from_fn(64, 64, |_, _| {
                    Rgb([rng.random(), rng.random(), rng.random()])
                })
            })
            .collect();
        group.bench_function(name, |b| {
            b.iter(|| aggregate_to_grid(black_box(&frames), &layout).unwrap())
        });
    }
    group.finish();
}

fn forward_backward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(EncoderConfig::default(), 0).unwrap();
    let images = Array4::from_shape_fn((128, 3, 32, 32), |_| rng.random::<f64>());
    let mut group = c.benchmark_group("encoder");
    group.sample_size(10);
    group.bench_function("forward_128", |b| {
        b.iter(|| model.forward(black_box(&images), false).unwrap())
    });
    group.bench_function("forward_backward_128", |b| {
        b.iter(|| {
            let pass = model.forward(black_box(&images), true).unwrap();
            let grad = Array2::ones(pass.projections.raw_dim());
            model.backward(&pass, Some(grad.view()), None).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, loss_grad, aggregation, forward_backward);
criterion_main!(benches);
