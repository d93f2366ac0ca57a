use std::hint::black_box;

use aflsim_bench::{loss_pool, measured_profiles, pace_log, small_scenario};
use aflsim_core::analysis::{verify_lemma1, verify_thm1};
use aflsim_core::events::encode_log;
use aflsim_core::run_scenario;
use aflsim_core::selection::{dbscan_1d, select_pisces, SelectionConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_dbscan(c: &mut Criterion) {
    let mut group = c.benchmark_group("dbscan_1d");
    for n in [10usize, 100, 1000] {
        let pool = loss_pool(n, 7);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pool, |b, pool| {
            b.iter(|| dbscan_1d(black_box(pool), 0.5, 2).unwrap())
        });
    }
    group.finish();
}

fn bench_select(c: &mut Criterion) {
    let mut group = c.benchmark_group("select_pisces");
    let config = SelectionConfig::default();
    for n in [100usize, 1000] {
        let profiles = measured_profiles(n, 3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &profiles, |b, profiles| {
            b.iter(|| select_pisces(black_box(profiles), &config, 20).unwrap())
        });
    }
    group.finish();
}

fn bench_run(c: &mut Criterion) {
    let cfg = small_scenario();
    let mut group = c.benchmark_group("run_scenario");
    group.sample_size(10);
    group.bench_function("pace_20_clients", |b| b.iter(|| run_scenario(black_box(&cfg)).unwrap()));
    group.finish();
}

fn bench_verify(c: &mut Criterion) {
    let log = pace_log();
    c.bench_function("verify_thm1", |b| b.iter(|| verify_thm1(black_box(&log), 20).unwrap()));
    c.bench_function("verify_lemma1", |b| {
        b.iter(|| verify_lemma1(black_box(&log), 0.01).unwrap())
    });
    c.bench_function("encode_log", |b| b.iter(|| encode_log(black_box(&log))));
}

criterion_group!(benches, bench_dbscan, bench_select, bench_run, bench_verify);
criterion_main!(benches);
