use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use msfum_bench::ScanCase;
use msfum_core::ssm::{scan_chunked, scan_sequential};

fn scan_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("scan");
    group.sample_size(20);
    for len in [1024, 2048, 4096, 8192] {
        let case = ScanCase::new(len, 32, 16, 0);
        group.throughput(Throughput::Elements(len as u64));
        group.bench_with_input(BenchmarkId::new("sequential", len), &case, |bch, case| {
            bch.iter(|| scan_sequential(&case.inputs()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("chunked_256", len), &case, |bch, case| {
            bch.iter(|| scan_chunked(&case.inputs(), 256).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scan_kernels);
criterion_main!(benches);
