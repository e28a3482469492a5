use giqa_core::demo::gaussian_set;
use giqa_core::features::giqf;
use giqa_core::metrics::{normalize_scores, pair_accuracy, score_histogram, PairDataset, Winner};
use giqa_core::picker::pick_top;
use giqa_core::{
    build_index, fit_gmm, fit_pca, score_knn, split_train_val, CovarianceType, EmConfig, FeatureMatrix,
    ScoreTable, ScorerKind,
};
use proptest::prelude::*;

fn table(raw: Vec<f64>) -> ScoreTable {
    let ids = (0..raw.len()).map(|i| format!("img{i:04}")).collect();
    ScoreTable::new(ids, raw, ScorerKind::Gmm).unwrap()
}

fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_rows_auto_ids(rows.iter()).unwrap()
}

fn finite_rows(dim: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-100.0f64..100.0, dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn giqf_round_trip(rows in finite_rows(3, 1..40)) {
        let m = matrix(&rows);
        let back = giqf::decode(&giqf::encode(&m).unwrap()).unwrap();
        prop_assert_eq!(back.ids(), m.ids());
        prop_assert_eq!(back.data(), m.data());
        prop_assert_eq!(back.dim(), 3);
    }

    #[test]
    fn normalization_ignores_positive_affine_maps(
        raw in prop::collection::vec(-1e3f64..1e3, 2..50),
        a in 0.01f64..100.0,
        b in -1e3f64..1e3,
    ) {
        let n1 = normalize_scores(&table(raw.clone())).unwrap();
        let n2 = normalize_scores(&table(raw.iter().map(|v| a * v + b).collect())).unwrap();
        for (x, y) in n1.normalized().unwrap().iter().zip(n2.normalized().unwrap()) {
            prop_assert!((0.0..=1.0).contains(x));
            prop_assert!((x - y).abs() < 1e-6, "{} vs {}", x, y);
        }
    }

    #[test]
    fn pair_accuracy_depends_only_on_order(
        raw in prop::collection::vec(-10.0f64..10.0, 4..30),
        picks in prop::collection::vec((0usize..1000, 0usize..1000, any::<bool>()), 1..40),
    ) {
        let n = raw.len();
        let pairs = picks
            .iter()
            .map(|&(i, j, a)| (format!("img{:04}", i % n), format!("img{:04}", (i + 1 + j % (n - 1)) % n), if a { Winner::A } else { Winner::B }))
            .collect();
        let pairs = PairDataset::new(pairs, "generated").unwrap();
        let base = pair_accuracy(&table(raw.clone()), &pairs).unwrap().accuracy;
        let warped = pair_accuracy(&table(raw.iter().map(|v| v.powi(3) + 2.0 * v).collect()), &pairs).unwrap().accuracy;
        prop_assert_eq!(base, warped);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn picks_are_nested(raw in prop::collection::vec(-5.0f64..5.0, 1..80), r1 in 0.01f64..1.0, r2 in 0.01f64..1.0) {
        let t = table(raw);
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let small = pick_top(&t, lo).unwrap();
        let large = pick_top(&t, hi).unwrap();
        prop_assert!(small.len() <= large.len());
        prop_assert!(!small.is_empty());
        prop_assert_eq!(&large[..small.len()], &small[..]);
    }

    #[test]
    fn histogram_counts_every_score(raw in prop::collection::vec(-50.0f64..50.0, 1..100), bins in 1usize..20) {
        let t = normalize_scores(&table(raw.clone())).unwrap();
        let hist = score_histogram(&t, bins).unwrap();
        prop_assert_eq!(hist.len(), bins);
        prop_assert_eq!(hist.iter().map(|b| b.count).sum::<usize>(), raw.len());
    }

    #[test]
    fn knn_density_scales_inversely_with_squared_distance(
        reference in finite_rows(2, 3..30),
        queries in finite_rows(2, 1..10),
        k in 1usize..3,
    ) {
        let scale = 4.0;
        let scaled = |rows: &[Vec<f64>]| rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect::<Vec<Vec<f64>>>();
        let base = score_knn(&build_index(matrix(&reference)).unwrap(), &matrix(&queries), k).unwrap();
        let big = score_knn(&build_index(matrix(&scaled(&reference))).unwrap(), &matrix(&scaled(&queries)), k).unwrap();
        for (i, (x, y)) in base.raw().iter().zip(big.raw()).enumerate() {
            if base.flagged()[i] || big.flagged()[i] {
                continue;
            }
            prop_assert!((x / (scale * scale) - y).abs() <= 1e-6 * y.abs().max(1e-12), "{} vs {}", x, y);
        }
    }

    #[test]
    fn split_partitions_rows(n in 2usize..200, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let m = gaussian_set(n, 2, "x", 0);
        let (a, b) = split_train_val(&m, ratio, seed).unwrap();
        prop_assert_eq!(a.count() + b.count(), n);
        let mut ids: Vec<&String> = a.ids().iter().chain(b.ids()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }
}

#[test]
fn gmm_fit_follows_translation() {
    let data = gaussian_set(300, 3, "x", 11);
    let shift = [5.0, -3.0, 2.5];
    let moved: Vec<Vec<f64>> = (0..data.count())
        .map(|i| data.row_f64(i).iter().zip(shift).map(|(v, s)| v + s).collect())
        .collect();
    let moved = FeatureMatrix::from_rows(data.ids().to_vec(), moved).unwrap();
    let config = EmConfig { seed: 2, ..EmConfig::default() };
    let a = fit_gmm(&data, 3, CovarianceType::Full, &config).unwrap();
    let b = fit_gmm(&moved, 3, CovarianceType::Full, &config).unwrap();
    assert!((a.final_log_likelihood() - b.final_log_likelihood()).abs() < 1e-4);
    for m in 0..3 {
        for (d, s) in shift.iter().enumerate() {
            let delta = b.model.means()[(m, d)] - a.model.means()[(m, d)];
            assert!((delta - s).abs() < 1e-3, "component {m} dim {d}: {delta}");
        }
    }
}

#[test]
fn pca_retains_requested_variance() {
    let data = gaussian_set(400, 6, "x", 12);
    let full = fit_pca(&data, 1.0).unwrap();
    assert_eq!(full.output_dim(), 6);
    let total: f64 = full.explained_variance().iter().sum();
    for fraction in [0.3, 0.6, 0.9] {
        let model = fit_pca(&data, fraction).unwrap();
        let ev = model.explained_variance();
        let kept: f64 = ev.iter().sum();
        assert!(kept / total >= fraction - 1e-12);
        let fewer: f64 = ev[..ev.len() - 1].iter().sum();
        assert!(fewer / total < fraction, "{fraction}: {} components is more than needed", ev.len());
    }
}
