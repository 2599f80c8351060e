use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mixforge_core::dataset::DatasetTable;
use mixforge_core::designer::{scan, GeneratorParams, ProbabilityMode, TargetCriteria};
use mixforge_core::forest::{fit_forest, Hyperparameters};
use mixforge_core::models::{fit_two_layer_all, loocv, ModelKind, TwoLayerConfig};
use mixforge_core::TargetId;

fn forest_fit(c: &mut Criterion) {
    let table = DatasetTable::supplementary();
    let (_, x, y) = table.training_set(TargetId::EnvImpact);
    c.bench_function("fit_forest 512x6x2 env_impact", |b| {
        b.iter(|| fit_forest(black_box(&x), black_box(&y), Hyperparameters::new(512, 6, 2), 42).unwrap())
    });
    let forest = fit_forest(&x, &y, Hyperparameters::new(512, 6, 2), 42).unwrap();
    let probe = table.feature_row(3);
    c.bench_function("predict 512 trees", |b| b.iter(|| forest.predict(black_box(&probe)).unwrap()));
}

fn two_layer(c: &mut Criterion) {
    let table = DatasetTable::supplementary();
    let hp = ModelKind::TwoLayer.default_hyperparameters();
    c.bench_function("fit_two_layer_all", |b| {
        b.iter(|| fit_two_layer_all(&table, hp, 0, TwoLayerConfig::default()).unwrap())
    });
    let models = fit_two_layer_all(&table, hp, 0, TwoLayerConfig::default()).unwrap();
    let criteria = TargetCriteria::low_k();
    let params = GeneratorParams::default();
    c.bench_function("scan low-k", |b| {
        b.iter(|| scan(&models, &criteria, &params, ProbabilityMode::Gaussian).unwrap())
    });
}

fn cross_validation(c: &mut Criterion) {
    let table = DatasetTable::supplementary();
    let mut group = c.benchmark_group("loocv");
    group.sample_size(10);
    group.bench_function("single_rf density", |b| {
        b.iter(|| {
            loocv(&table, TargetId::Density, ModelKind::SingleRf, ModelKind::SingleRf.default_hyperparameters(), 0)
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, forest_fit, two_layer, cross_validation);
criterion_main!(benches);
