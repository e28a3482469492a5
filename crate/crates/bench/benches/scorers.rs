use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use giqa_core::demo::{gaussian_set, iteration_series};
use giqa_core::mbc::{LabeledFeature, MbcTrainConfig};
use giqa_core::{build_index, fit_gmm, score_gmm, score_knn, train_mbc, CovarianceType, EmConfig};

fn gmm(c: &mut Criterion) {
    let real = gaussian_set(2000, 16, "real", 1);
    let queries = gaussian_set(1000, 16, "gen", 2);
    let config = EmConfig { max_em_iters: 20, ..EmConfig::default() };

    let mut group = c.benchmark_group("gmm_fit");
    group.sample_size(10);
    for cov in [CovarianceType::Full, CovarianceType::Diag] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{cov:?}")), &cov, |b, &cov| {
            b.iter(|| fit_gmm(&real, 7, cov, &config).unwrap())
        });
    }
    group.finish();

    let model = fit_gmm(&real, 7, CovarianceType::Full, &config).unwrap().model;
    c.bench_function("gmm_score_1000", |b| b.iter(|| score_gmm(&model, &queries).unwrap()));
}

fn knn(c: &mut Criterion) {
    let index = build_index(gaussian_set(5000, 16, "real", 3)).unwrap();
    let queries = gaussian_set(500, 16, "gen", 4);
    let mut group = c.benchmark_group("knn_score_500");
    for k in [1, 10] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| score_knn(&index, &queries, k).unwrap())
        });
    }
    group.finish();
}

fn mbc(c: &mut Criterion) {
    let series = iteration_series(8, 10, 200, 500, 0.9, 0.05, 5);
    let dataset: Vec<LabeledFeature> = series
        .tags
        .iter()
        .enumerate()
        .map(|(i, tag)| LabeledFeature::new(series.features.row_f64(i), *tag, 0.9).unwrap())
        .collect();
    let config = MbcTrainConfig { epochs: 10, ..MbcTrainConfig::default() };
    let mut group = c.benchmark_group("mbc_train");
    group.sample_size(10);
    group.bench_function("8_heads_10_epochs", |b| b.iter(|| train_mbc(&dataset, 8, &config).unwrap()));
    group.finish();
}

criterion_group!(benches, gmm, knn, mbc);
criterion_main!(benches);
