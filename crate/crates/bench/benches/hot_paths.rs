//! Benchmarks for the paths that dominate pipeline wall time: batched
//! conv forward/backward, the spectrum decode, the hash suite, and the
//! pairwise KL metric.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ediv_core::engine::{Network, Tensor};
use ediv_core::lens::{fourier_param_init, ColorMatrix};
use ediv_core::metrics::PredictionSet;
use ediv_core::phash::{self, HashAlg, RasterImage};

fn bench_forward_backward(c: &mut Criterion) {
    let net = Network::desk32(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f64> = (0..8 * 3 * 32 * 32).map(|_| rng.gen::<f64>()).collect();
    let batch = Tensor::new(vec![8, 3, 32, 32], data).unwrap();
    let labels = [0usize, 1, 2, 3, 4, 5, 6, 7];

    c.bench_function("forward_batch8", |b| {
        b.iter(|| {
            let fwd = net.forward(black_box(&batch)).unwrap();
            black_box(fwd.output_tensor());
        })
    });
    c.bench_function("forward_backward_batch8", |b| {
        b.iter(|| {
            let mut fwd = net.forward(black_box(&batch)).unwrap();
            let out = fwd.output_id();
            let loss = fwd.graph_mut().cross_entropy(out, &labels, "loss").unwrap();
            fwd.graph_mut().backward(loss, &[1.0]).unwrap();
            black_box(fwd.graph().grad(fwd.input_id()).unwrap().len());
        })
    });
}

fn bench_spectrum_decode(c: &mut Criterion) {
    let spectrum = fourier_param_init(32, 32, 3, 7).unwrap();
    let color = ColorMatrix::identity(3);
    c.bench_function("spectrum_decode_32x32", |b| {
        b.iter(|| black_box(spectrum.decode(&color).unwrap()))
    });
}

fn bench_hash_suite(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f64> = (0..64 * 64 * 3).map(|_| rng.gen::<f64>()).collect();
    let img = RasterImage::new(64, 64, 3, data).unwrap();
    for algo in HashAlg::ALL {
        c.bench_function(&format!("hash_{algo}_64x64"), |b| {
            b.iter(|| black_box(phash::hash_image(&img, algo).unwrap()))
        });
    }
}

fn bench_kl_pairwise(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (m, n, k) = (4, 500, 10);
    let probs: Vec<f64> = (0..m * n)
        .flat_map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(move |v| v / total)
        })
        .collect();
    let set = PredictionSet::new(probs, m, n, k).unwrap();
    c.bench_function("kl_pairwise_4x500x10", |b| {
        b.iter(|| black_box(set.kl_pairwise().unwrap()))
    });
}

criterion_group!(
    benches,
    bench_forward_backward,
    bench_spectrum_decode,
    bench_hash_suite,
    bench_kl_pairwise
);
criterion_main!(benches);
