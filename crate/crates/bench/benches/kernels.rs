use std::hint::black_box;

use candle_core::{DType, Device, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use inkdiff_core::diffusion::forward_sample;
use inkdiff_core::metrics::frechet_distance;
use inkdiff_core::recognizer::ctc_loss;
use inkdiff_core::{
    make_schedule, render_word, ssim, Alphabet, DenoiserConfig, DenoiserModel, ScheduleKind,
    WriterStyle,
};

fn corpus(c: &mut Criterion) {
    let alphabet = Alphabet::lowercase();
    let style = WriterStyle::preset(2, 7);
    c.bench_function("render_word", |b| {
        b.iter(|| render_word(black_box("handwriting"), &style, 3, &alphabet).unwrap())
    });
}

fn recognizer(c: &mut Criterion) {
    let dev = Device::Cpu;
    let logits = Tensor::randn(0f32, 1.0, (32, 64, 27), &dev).unwrap();
    let targets: Vec<Vec<usize>> = (0..32).map(|i| vec![1 + i % 26, 2, 3, 4, 5]).collect();
    c.bench_function("ctc_loss_b32_t64", |b| {
        b.iter(|| ctc_loss(black_box(&logits), &targets, 0).unwrap())
    });
}

fn diffusion(c: &mut Criterion) {
    let dev = Device::Cpu;
    let cfg = DenoiserConfig {
        base: 16,
        groups: 8,
        cond_dim: 64,
        ..Default::default()
    };
    let model = DenoiserModel::new(cfg, 1, DType::F32, &dev).unwrap();
    let x = Tensor::randn(0f32, 1.0, (2, 1, 64, 256), &dev).unwrap();
    let cond = Tensor::randn(0f32, 1.0, (2, 3 * 64), &dev).unwrap();
    c.bench_function("denoiser_forward_b2_base16", |b| {
        b.iter(|| model.forward(black_box(&x), &[10, 150], &cond).unwrap())
    });

    let sched = make_schedule(200, ScheduleKind::Cosine).unwrap();
    let x0 = Tensor::randn(0f32, 1.0, (64, 1, 64, 256), &dev).unwrap();
    let eps = Tensor::randn(0f32, 1.0, (64, 1, 64, 256), &dev).unwrap();
    let steps: Vec<usize> = (1..=64).map(|i| i * 3).collect();
    c.bench_function("forward_sample_b64", |b| {
        b.iter(|| forward_sample(black_box(&x0), &steps, &eps, &sched).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let alphabet = Alphabet::lowercase();
    let a = render_word("metric", &WriterStyle::preset(0, 1), 1, &alphabet).unwrap();
    let b_img = render_word("metric", &WriterStyle::preset(1, 1), 1, &alphabet).unwrap();
    c.bench_function("ssim_64x256", |b| {
        b.iter(|| ssim(black_box(&a.image), &b_img.image).unwrap())
    });

    let feats = |offset: f64| -> Vec<Vec<f64>> {
        (0..256)
            .map(|i| {
                (0..64)
                    .map(|j| ((i * 31 + j * 17) % 97) as f64 / 97.0 + offset)
                    .collect()
            })
            .collect()
    };
    let (r, g) = (feats(0.0), feats(0.1));
    c.bench_function("frechet_distance_256x64", |b| {
        b.iter(|| frechet_distance(black_box(&r), &g).unwrap())
    });
}

criterion_group!(benches, corpus, recognizer, diffusion, metrics);
criterion_main!(benches);
