use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mew_bench::{signal, tensor};
use mew_core::mew::{MewConfig, Mewb};
use mew_core::nn::Builder;
use mew_core::spectral::fft::fft1d;
use mew_core::spectral::spectral_modulate;
use mew_core::train::ModelSize;
use mew_core::{AxisPair, MewUnet, ParamStore, Session, TrainConfig};

fn fft(c: &mut Criterion) {
    let mut g = c.benchmark_group("fft1d");
    // Powers of two take the radix-2 path, the rest go through Bluestein.
    for n in [56, 64, 112, 128, 224, 256] {
        let x = signal(n, n as u64);
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| b.iter(|| fft1d(black_box(x))));
    }
    g.finish();
}

fn modulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("spectral_modulate");
    let dims = [8, 32, 64, 64];
    let x = tensor(&dims, 1);
    for axes in AxisPair::ALL {
        let mut ws = axes.half_shape(dims);
        ws[0] = 1;
        let w = tensor(&ws, 2);
        g.bench_function(axes.name(), |b| b.iter(|| spectral_modulate(black_box(&x), &w, axes).unwrap()));
    }
    g.finish();
}

fn mewb(c: &mut Criterion) {
    let mut store = ParamStore::new();
    let block = Mewb::new(&mut Builder::new(&mut store, 0), "b", &MewConfig::new(32, 32, 32)).unwrap();
    let x = tensor(&[4, 32, 32, 32], 3);
    let mut g = c.benchmark_group("mewb 4x32x32x32");
    g.sample_size(20);
    g.bench_function("forward", |b| {
        b.iter(|| {
            let mut s = Session::new(&store, false);
            let xv = s.graph.constant(x.clone());
            let y = block.forward(&mut s, xv).unwrap();
            black_box(s.graph.value(y).len())
        })
    });
    g.bench_function("forward+backward", |b| {
        b.iter(|| {
            let mut s = Session::new(&store, true);
            let xv = s.graph.constant(x.clone());
            let y = block.forward(&mut s, xv).unwrap();
            let loss = s.graph.sum(y);
            black_box(s.backward(loss).unwrap().len())
        })
    });
    g.finish();
}

fn network(c: &mut Criterion) {
    let cfg = TrainConfig {
        model: ModelSize::Toy,
        ..TrainConfig::isic()
    };
    let net = MewUnet::build(&cfg.network(3, 64, 64), 0).unwrap();
    let x = tensor(&[1, 3, 64, 64], 4);
    let mut g = c.benchmark_group("toy network 64x64");
    g.sample_size(10);
    g.bench_function("predict", |b| b.iter(|| net.predict(black_box(&x)).unwrap()));
    g.finish();
}

criterion_group!(benches, fft, modulate, mewb, network);
criterion_main!(benches);
