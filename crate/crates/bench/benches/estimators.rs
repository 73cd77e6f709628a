use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use margin_audit::{
    bootstrap_decomposition, decompose, id_formula_effect, oracle_effects, BootstrapConfig, DecompositionMode,
    EffectKind, NuisanceConfig, NuisanceSet, OracleMode, Target, ThresholdSpec,
};
use margin_audit_bench::{hiring_model, random_model, sample};

fn fit(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit");
    for n in [10_000usize, 100_000] {
        let data = sample(&random_model(1), n);
        let targets = data.available_targets();
        g.bench_with_input(BenchmarkId::new("frequency", n), &data, |b, d| {
            b.iter(|| NuisanceSet::fit(d, &targets, &NuisanceConfig::frequency()).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("logistic", n), &data, |b, d| {
            b.iter(|| NuisanceSet::fit(d, &targets, &NuisanceConfig::logistic()).unwrap())
        });
    }
    g.finish();
}

fn estimate(c: &mut Criterion) {
    let data = sample(&random_model(2), 100_000);
    let set = NuisanceSet::fit(&data, &data.available_targets(), &NuisanceConfig::frequency()).unwrap();
    c.bench_function("decompose/thm1/1e5", |b| {
        b.iter(|| decompose(black_box(&data), &set, DecompositionMode::Thm1).unwrap())
    });
    let hiring = sample(&hiring_model(), 100_000);
    let hiring_set = NuisanceSet::fit(&hiring, &hiring.available_targets(), &NuisanceConfig::frequency()).unwrap();
    c.bench_function("decompose/hiring/1e5", |b| {
        b.iter(|| decompose(black_box(&hiring), &hiring_set, DecompositionMode::Thm1).unwrap())
    });
    c.bench_function("id_formula/de_y/1e5", |b| {
        b.iter(|| id_formula_effect(black_box(&data), EffectKind::De, Target::Y).unwrap())
    });
}

fn bootstrap(c: &mut Criterion) {
    let data = sample(&random_model(3), 10_000);
    let mut g = c.benchmark_group("bootstrap");
    g.sample_size(10);
    g.bench_function("100x1e4", |b| {
        b.iter(|| {
            bootstrap_decomposition(&data, &NuisanceConfig::frequency(), DecompositionMode::Thm1, &BootstrapConfig::new(100, 7))
                .unwrap()
        })
    });
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let model = random_model(4);
    let th = ThresholdSpec::fixed(0.5);
    c.bench_function("oracle/exact", |b| {
        b.iter(|| oracle_effects(&model, Target::Yhat, &th, OracleMode::Exact).unwrap())
    });
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    g.bench_function("monte_carlo/1e5", |b| {
        b.iter(|| oracle_effects(&model, Target::Yhat, &th, OracleMode::MonteCarlo { samples: 100_000, seed: 1 }).unwrap())
    });
    g.finish();
}

criterion_group!(benches, fit, estimate, bootstrap, oracle);
criterion_main!(benches);
