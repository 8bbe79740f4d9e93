use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::DMatrix;
use patternkit_core::impute::fit_engine;
use patternkit_core::linear::{fit_matrix, DesignSpec};
use patternkit_core::predict::fit_pmks;
use patternkit_core::rng::rng_from_seed;
use patternkit_core::synthetic::support_like;
use patternkit_core::{ImputationMethod, ImputeOptions};
use rand::Rng;
use rand_distr::StandardNormal;

fn least_squares(c: &mut Criterion) {
    let mut rng = rng_from_seed(1);
    let (n, t) = (1000, 11);
    let x = DMatrix::from_fn(n, t, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let spec = DesignSpec::linear(true, &(0..t - 1).collect::<Vec<_>>());
    c.bench_function("fit_matrix 1000x11", |b| {
        b.iter_batched(|| spec.clone(), |s| fit_matrix(&x, &y, s).unwrap(), BatchSize::SmallInput)
    });
}

fn pattern_submodels(c: &mut Criterion) {
    let ds = support_like(7).unwrap();
    c.bench_function("fit_pmks clinical-style data", |b| b.iter(|| fit_pmks(&ds, None, false).unwrap()));
}

fn pmm_engine(c: &mut Criterion) {
    let ds = support_like(7).unwrap();
    let options = ImputeOptions {
        m: 2,
        cycles: 3,
        ..ImputeOptions::default()
    };
    let mut group = c.benchmark_group("imputation");
    group.sample_size(10);
    group.bench_function("pmm chained m=2 cycles=3", |b| {
        b.iter(|| fit_engine(&ds, ImputationMethod::PmmMice, &options, 3).unwrap())
    });
    group.bench_function("conditional mean", |b| {
        b.iter(|| fit_engine(&ds, ImputationMethod::CondMean, &ImputeOptions::default(), 3).unwrap())
    });
    group.finish();
}

criterion_group!(benches, least_squares, pattern_submodels, pmm_engine);
criterion_main!(benches);
