//! Throughput benches for the two parallel workloads: disorder-ensemble
//! averaging (one task per realization) and dense spectrum evaluation (one
//! task per probe frequency).
//!
//! With the default `parallel` feature each workload runs twice — on a
//! single-thread pool and on the default-size pool — so the scheduling
//! overhead and speedup are visible side by side. Compiled with
//! `--no-default-features` the same benches measure the true sequential
//! fallback (no thread pool at all).

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qmeta_core::disorder::{ensemble_average, DisorderShape, DisorderSpec};
use qmeta_core::response::{transmission_spectrum, ProbeGrid};
use qmeta_core::{CavityParams, QubitParams, SystemConfig};

fn paper_cell(n: usize) -> SystemConfig {
    SystemConfig {
        cavity: CavityParams {
            nu_c: 5755.0,
            kappa: 30.0,
            gamma_in: 30.0,
            gamma_out: 30.0,
        },
        qubits: vec![
            QubitParams {
                epsilon: 5755.0,
                gamma: 1.0,
                g: 42.0,
            };
            n
        ],
    }
}

fn bench_ensemble(c: &mut Criterion) {
    let config = paper_cell(17);
    let spec = DisorderSpec {
        mean: 5755.0,
        spread_delta: 120.0,
        shape: DisorderShape::Flat,
        master_seed: 7,
    };
    let mut group = c.benchmark_group("ensemble_average_n17_m1000");

    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        group.bench_function("threads_1", |b| {
            b.iter(|| {
                single.install(|| {
                    black_box(ensemble_average(&config, &spec, 1000).unwrap());
                })
            })
        });
        group.bench_function("threads_default", |b| {
            b.iter(|| black_box(ensemble_average(&config, &spec, 1000).unwrap()))
        });
    }

    #[cfg(not(feature = "parallel"))]
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(ensemble_average(&config, &spec, 1000).unwrap()))
    });

    group.finish();
}

fn bench_spectrum(c: &mut Criterion) {
    let config = paper_cell(25);
    let grid = ProbeGrid::linspace(5755.0 - 400.0, 5755.0 + 400.0, 4001).unwrap();
    let mut group = c.benchmark_group("spectrum_n25_4001pts");
    group.sample_size(40);

    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        group.bench_function("threads_1", |b| {
            b.iter(|| {
                single.install(|| {
                    black_box(transmission_spectrum(&config, &grid).unwrap());
                })
            })
        });
        group.bench_function("threads_default", |b| {
            b.iter(|| black_box(transmission_spectrum(&config, &grid).unwrap()))
        });
    }

    #[cfg(not(feature = "parallel"))]
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(transmission_spectrum(&config, &grid).unwrap()))
    });

    group.finish();
}

criterion_group!(benches, bench_ensemble, bench_spectrum);
criterion_main!(benches);
