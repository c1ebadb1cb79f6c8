use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ndarray::Array2;
use ttrnn_core::bench::{bench_map, Family, SweepSettings};

const BATCH: usize = 8;

fn maps(c: &mut Criterion, name: &str, family: Family, sizes: &[usize]) {
    let settings = SweepSettings::default();
    let mut group = c.benchmark_group(name);
    for &n in sizes {
        let map = bench_map(family, n, &settings).unwrap();
        let x = Array2::from_shape_fn((BATCH, n), |(b, i)| ((b * 31 + i * 7) % 13) as f64 / 13.0 - 0.5);
        let g = Array2::from_shape_fn((BATCH, n), |(b, i)| ((b * 17 + i * 5) % 11) as f64 / 11.0 - 0.5);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("forward", n), &n, |bch, _| {
            bch.iter(|| map.forward(x.view()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("backward", n), &n, |bch, _| {
            bch.iter(|| map.backward(x.view(), g.view()).unwrap())
        });
    }
    group.finish();
}

fn tt(c: &mut Criterion) {
    maps(c, "tt_rank4", Family::Tt, &[1024, 4096, 16384, 65536]);
}

fn dense(c: &mut Criterion) {
    maps(c, "dense", Family::Dense, &[1024, 2048, 4096]);
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = tt, dense
}
criterion_main!(benches);
