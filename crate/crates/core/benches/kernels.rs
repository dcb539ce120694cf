//! Kernel benchmarks: the rayon matmul against the single-threaded path
//! across sizes, plus fake quantization throughput.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use osq_core::quant::{calibrate_minmax, fake_quant, QuantSpec};
use osq_core::rng::Rng;
use osq_core::tensor::{matmul, matmul_serial, Matrix};

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_in(-2.0, 2.0))
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for size in [64usize, 128, 256] {
        let mut rng = Rng::new(size as u64);
        let a = random_matrix(&mut rng, size, size);
        let bt = random_matrix(&mut rng, size, size);
        group.bench_with_input(BenchmarkId::new("parallel", size), &size, |b, _| {
            b.iter(|| matmul(&a, &bt).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("serial", size), &size, |b, _| {
            b.iter(|| matmul_serial(&a, &bt).unwrap())
        });
    }
    group.finish();
}

fn bench_fake_quant(c: &mut Criterion) {
    let mut group = c.benchmark_group("fake_quant");
    let mut rng = Rng::new(7);
    let x = random_matrix(&mut rng, 256, 256);
    for (name, spec) in [
        ("per_tensor", QuantSpec::act_per_tensor(6)),
        ("per_token", QuantSpec::act_per_token(6)),
        ("per_channel", QuantSpec::wgt_per_channel(6)),
    ] {
        let params = calibrate_minmax(&x, &spec).unwrap();
        group.bench_function(name, |b| b.iter(|| fake_quant(&x, &params, &spec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_fake_quant);
criterion_main!(benches);
