use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use moo_ids_bench::blobs;
use moo_ids_core::autodp::{balance, compute_balance_plan, fit_normalization, BalanceSettings};
use moo_ids_core::dataset::class_distribution;
use moo_ids_core::feature_scoring::information_gain;
use moo_ids_core::gbdt::{self, Hyperparams, LearnerKind};

fn learners(c: &mut Criterion) {
    let table = blobs(5000, 20, 5, 1);
    let hp = Hyperparams {
        n_estimators: 20,
        max_depth: 6,
        ..Default::default()
    };
    let mut group = c.benchmark_group("gbdt_train_5000x20");
    group.sample_size(10);
    for kind in [LearnerKind::ExactSecondOrder, LearnerKind::HistogramGossEfb] {
        group.bench_with_input(BenchmarkId::from_parameter(kind.as_str()), &kind, |b, &k| {
            b.iter(|| gbdt::train(&table, &hp, k, 0).unwrap())
        });
    }
    group.finish();

    let model = gbdt::train(&table, &hp, LearnerKind::HistogramGossEfb, 0).unwrap();
    c.bench_function("gbdt_predict_proba_5000", |b| {
        b.iter(|| model.predict_proba(table.features().view()).unwrap())
    });
}

fn preprocessing(c: &mut Criterion) {
    let table = blobs(5000, 20, 5, 2);
    c.bench_function("fit_normalization_5000x20", |b| {
        b.iter(|| fit_normalization(&table, 0).unwrap())
    });
    c.bench_function("information_gain_5000x20", |b| {
        b.iter(|| information_gain(&table, 10).unwrap())
    });
    let plan = compute_balance_plan(&class_distribution(&table)).unwrap();
    let mut group = c.benchmark_group("balance");
    group.sample_size(10);
    group.bench_function("smote_adasyn_5000x20", |b| {
        b.iter(|| balance(&table, &plan, BalanceSettings::default(), 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, learners, preprocessing);
criterion_main!(benches);
