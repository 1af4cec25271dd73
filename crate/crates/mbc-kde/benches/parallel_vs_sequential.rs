//! Benchmarks for the Monte Carlo hot paths: the rayon-parallel replication
//! driver against the sequential fallback, plus single-estimate tabulation
//! and one oracle bandwidth search.
//!
//! Run with `cargo bench`; drop the parallel comparison with
//! `cargo bench --no-default-features`.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use mbc_kde::densities::mw_density;
use mbc_kde::estimators::{estimate, EstimatorKind, EstimatorSpec, Sample};
use mbc_kde::kernels::Bandwidth;
use mbc_kde::metrics::{oracle_bandwidth, simulation_grid, GridSpec, SearchSpec};
use mbc_kde::sim::{run_replications_sequential, SimulationConfig};

fn bench_config(reps: usize) -> SimulationConfig {
    SimulationConfig {
        density_id: 1,
        n: 100,
        reps,
        seed: 42,
        kinds: vec![EstimatorKind::Kde, EstimatorKind::HobskdeRenorm],
        search: SearchSpec::default(),
        grid: GridSpec::default(),
        workers: 0,
    }
}

fn bench_replications(c: &mut Criterion) {
    let mut group = c.benchmark_group("replications");
    group.sample_size(10);
    for reps in [4usize, 16] {
        let cfg = bench_config(reps);
        group.bench_with_input(BenchmarkId::new("sequential", reps), &cfg, |b, cfg| {
            b.iter(|| run_replications_sequential(black_box(cfg)).unwrap())
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", reps), &cfg, |b, cfg| {
            b.iter(|| mbc_kde::sim::run_replications_parallel(black_box(cfg)).unwrap())
        });
    }
    group.finish();
}

fn bench_estimators(c: &mut Criterion) {
    let truth = mw_density(1).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let sample = Sample::new(truth.sample(100, &mut rng).unwrap()).unwrap();
    let grid = simulation_grid(
        &truth,
        &sample,
        &SearchSpec::default(),
        &GridSpec::default(),
    )
    .unwrap();
    let h = Bandwidth::new(0.35).unwrap();

    let mut group = c.benchmark_group("estimate_n100");
    for kind in EstimatorKind::TABLE1 {
        group.bench_function(kind.token(), |b| {
            let spec = EstimatorSpec::new(kind, h);
            b.iter(|| estimate(black_box(&spec), &sample, &grid).unwrap())
        });
    }
    group.finish();
}

fn bench_oracle_search(c: &mut Criterion) {
    let truth = mw_density(1).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let sample = Sample::new(truth.sample(100, &mut rng).unwrap()).unwrap();
    let search = SearchSpec::default();
    let grid = simulation_grid(&truth, &sample, &search, &GridSpec::default()).unwrap();
    c.bench_function("oracle_search_kde_n100", |b| {
        b.iter(|| {
            oracle_bandwidth(
                black_box(EstimatorKind::Kde),
                &sample,
                &truth,
                &search,
                &grid,
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_replications,
    bench_estimators,
    bench_oracle_search
);
criterion_main!(benches);
