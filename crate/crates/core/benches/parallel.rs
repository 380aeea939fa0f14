//! Parallel vs sequential kernels. The rayon paths (feature `parallel`,
//! enabled by default) and the `seq` fallbacks produce bit-identical
//! results; these benches measure what the parallelism buys on the
//! data-parallel inner loops: batched convolutions, k-NN distances, and
//! pairwise pattern-histogram divergences.
//!
//! Run with `cargo bench -p geogen`. Building with
//! `--no-default-features` benches the sequential dispatch only.

use criterion::{criterion_group, criterion_main, Criterion};
use geogen::autodiff::kernels::{self, ConvGeom};
use geogen::conditioner::{kth_nn_with_indices, kth_nn_with_indices_seq};
use geogen::data::{synth_channels, SynthParams};
use geogen::{assess, rng};
use std::hint::black_box;

fn randv(n: usize, seed: u64) -> Vec<f32> {
    let mut s = rng::stream(seed, "bench");
    (0..n).map(|_| rng::normal_f64(&mut s) as f32).collect()
}

fn bench_conv(c: &mut Criterion) {
    // the widest hidden layer of a desk-scale discriminator step
    let g = ConvGeom { c_in: 32, h: 16, w: 16, c_out: 64, f: 4, stride: 2, padding: 1 };
    let batch = 64;
    let x = randv(batch * g.c_in * g.h * g.w, 1);
    let filters = randv(g.c_out * g.c_in * g.f * g.f, 2);
    let out_len = g.c_out * g.out_h() * g.out_w();
    let mut out = vec![0f32; batch * out_len];
    let d_out = randv(batch * out_len, 3);
    let mut d_x = vec![0f32; x.len()];
    let mut d_f = vec![0f32; filters.len()];

    let mut group = c.benchmark_group("conv2d");
    group.bench_function("fwd/par", |b| {
        b.iter(|| kernels::conv_fwd(&g, batch, black_box(&x), &filters, &mut out))
    });
    group.bench_function("fwd/seq", |b| {
        b.iter(|| kernels::seq::conv_fwd(&g, batch, black_box(&x), &filters, &mut out))
    });
    group.bench_function("dinput/par", |b| {
        b.iter(|| kernels::conv_dinput(&g, batch, black_box(&d_out), &filters, &mut d_x))
    });
    group.bench_function("dinput/seq", |b| {
        b.iter(|| kernels::seq::conv_dinput(&g, batch, black_box(&d_out), &filters, &mut d_x))
    });
    group.bench_function("dfilters/par", |b| {
        b.iter(|| kernels::conv_dfilters(&g, batch, black_box(&x), &d_out, &mut d_f))
    });
    group.bench_function("dfilters/seq", |b| {
        b.iter(|| kernels::seq::conv_dfilters(&g, batch, black_box(&x), &d_out, &mut d_f))
    });
    group.finish();
}

fn bench_knn(c: &mut Criterion) {
    let (m, d, k) = (512usize, 30usize, 22usize);
    let points: Vec<f64> = randv(m * d, 4).into_iter().map(|v| v as f64).collect();

    let mut group = c.benchmark_group("kth_nn");
    group.bench_function("par", |b| {
        b.iter(|| kth_nn_with_indices(black_box(&points), m, d, k).unwrap())
    });
    group.bench_function("seq", |b| {
        b.iter(|| kth_nn_with_indices_seq(black_box(&points), m, d, k).unwrap())
    });
    group.finish();
}

fn bench_anodi(c: &mut Criterion) {
    let data = synth_channels(24, 32, 32, 7, &SynthParams::default()).unwrap();
    let images: Vec<&[f32]> = (0..data.count()).map(|i| data.image(i)).collect();
    let reference = data.image(0);

    let mut group = c.benchmark_group("anodi");
    group.sample_size(20);
    group.bench_function("pairwise/dispatch", |b| {
        b.iter(|| {
            assess::anodi_scores(black_box(&images), (32, 32), reference, (32, 32), &[1], 4)
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_conv, bench_knn, bench_anodi);
criterion_main!(benches);
