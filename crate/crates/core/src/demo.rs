//! Seeded synthetic feature sets used by the CLI `demo` command, the
//! acceptance suite and the benches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::features::{FeatureMatrix, IterationTag};
use crate::metrics::{PairDataset, Winner};
use crate::rng;
use crate::scores::{ScoreTable, ScorerKind};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| normal(rng)).collect()
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:05}")).collect()
}

/// `n` draws from `N(0, I)` in `dim` dimensions.
pub fn gaussian_set(n: usize, dim: usize, prefix: &str, seed: u64) -> FeatureMatrix {
    let mut rng = rng::seeded(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut rng, dim)).collect();
    FeatureMatrix::from_rows(ids(prefix, n), rows).expect("finite draws")
}

/// `n` points scattered with standard deviation `spread` around `center`.
/// A spread of zero gives `n` identical rows.
pub fn collapsed_set(center: &[f64], n: usize, spread: f64, prefix: &str, seed: u64) -> FeatureMatrix {
    let mut rng = rng::seeded(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| center.iter().map(|c| c + spread * normal(&mut rng)).collect())
        .collect();
    FeatureMatrix::from_rows(ids(prefix, n), rows).expect("finite draws")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoClusters {
    pub samples: FeatureMatrix,
    pub means: [[f64; 2]; 2],
    pub weights: [f64; 2],
    pub std: f64,
}

/// Two isotropic 2D clusters at (−2, 0) and (2, 1.5) with weights 0.3 and 0.7.
pub fn two_clusters(n: usize, seed: u64) -> TwoClusters {
    let means = [[-2.0, 0.0], [2.0, 1.5]];
    let weights = [0.3, 0.7];
    let std = 0.5;
    let mut rng = rng::seeded(seed);
    let rows: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let c = usize::from(rng.random::<f64>() >= weights[0]);
            [
                means[c][0] + std * normal(&mut rng),
                means[c][1] + std * normal(&mut rng),
            ]
        })
        .collect();
    TwoClusters {
        samples: FeatureMatrix::from_rows(ids("real-", n), rows).expect("finite draws"),
        means,
        weights,
        std,
    }
}

/// Corruption levels applied to generated images.
pub const CORRUPTION_LEVELS: [f64; 3] = [0.5, 1.0, 2.0];

/// Real images, graded-corruption generated images and pairs labeled by
/// corruption level.
#[derive(Debug, Clone)]
pub struct CorruptionBenchmark {
    pub real: FeatureMatrix,
    pub generated: FeatureMatrix,
    pub pairs: PairDataset,
    /// Noise level of each generated row.
    pub levels: Vec<f64>,
}

impl CorruptionBenchmark {
    /// Table scoring every generated image by `−level`.
    pub fn ground_truth(&self) -> ScoreTable {
        let raw = self.levels.iter().map(|l| -l).collect();
        ScoreTable::new(self.generated.ids().to_vec(), raw, ScorerKind::Gmm).expect("valid table")
    }
}

/// Real set: `n_real` draws from `N(0, I)`. Each of the `n_pairs` pairs
/// shares a base draw `z` and noise direction `ε`; its two images are
/// `z + σ ε` at two distinct levels from [`CORRUPTION_LEVELS`], and the
/// less corrupted one wins.
pub fn corruption_benchmark(dim: usize, n_real: usize, n_pairs: usize, seed: u64) -> CorruptionBenchmark {
    let real = gaussian_set(n_real, dim, "real-", seed);
    let mut rng = rng::seeded(seed ^ 0x9e37_79b9_7f4a_7c15);
    let bases: Vec<Vec<f64>> = (0..n_pairs).map(|_| normal_vec(&mut rng, dim)).collect();
    corrupt_pairs(real, bases, &mut rng)
}

/// Like [`corruption_benchmark`] but with real images and pair bases drawn
/// from [`two_clusters`].
pub fn two_cluster_benchmark(n_real: usize, n_pairs: usize, seed: u64) -> CorruptionBenchmark {
    let real = two_clusters(n_real, seed).samples;
    let bases = two_clusters(n_pairs, seed ^ 0x5851_f42d_4c95_7f2d).samples;
    let bases = (0..bases.count()).map(|i| bases.row_f64(i)).collect();
    let mut rng = rng::seeded(seed ^ 0x9e37_79b9_7f4a_7c15);
    corrupt_pairs(real, bases, &mut rng)
}

fn corrupt_pairs(real: FeatureMatrix, bases: Vec<Vec<f64>>, rng: &mut ChaCha8Rng) -> CorruptionBenchmark {
    let n_pairs = bases.len();
    let mut ids = Vec::with_capacity(2 * n_pairs);
    let mut rows = Vec::with_capacity(2 * n_pairs);
    let mut levels = Vec::with_capacity(2 * n_pairs);
    let mut pairs = Vec::with_capacity(n_pairs);
    for (p, z) in bases.into_iter().enumerate() {
        let eps = normal_vec(rng, z.len());
        let first = rng.random_range(0..3);
        let second = (first + rng.random_range(1..3)) % 3;
        let (sa, sb) = (CORRUPTION_LEVELS[first], CORRUPTION_LEVELS[second]);
        for (tag, s) in [("a", sa), ("b", sb)] {
            ids.push(format!("pair{p:05}-{tag}"));
            rows.push(z.iter().zip(&eps).map(|(z, e)| z + s * e).collect::<Vec<_>>());
            levels.push(s);
        }
        let winner = if sa < sb { Winner::A } else { Winner::B };
        pairs.push((ids[2 * p].clone(), ids[2 * p + 1].clone(), winner));
    }
    CorruptionBenchmark {
        real,
        generated: FeatureMatrix::from_rows(ids, rows).expect("finite draws"),
        pairs: PairDataset::new(pairs, "synthetic corruption pairs").expect("distinct ids"),
        levels,
    }
}

/// Images from a sequence of generator checkpoints plus real images, for
/// training the classifier heads.
#[derive(Debug, Clone)]
pub struct IterationSeries {
    pub features: FeatureMatrix,
    pub tags: Vec<IterationTag>,
}

/// `per_checkpoint` images at each of `checkpoints + 1` evenly spaced
/// iterations `0, 1000, …` and `n_real` real images. The first two features
/// grow monotonically with the image's quality `q` (its pseudo-label), the
/// others are pure noise.
pub fn iteration_series(
    dim: usize,
    checkpoints: u64,
    per_checkpoint: usize,
    n_real: usize,
    s_g: f64,
    noise: f64,
    seed: u64,
) -> IterationSeries {
    assert!(dim >= 2, "iteration series needs at least two features");
    let max_iter = checkpoints * 1000;
    let mut rng = rng::seeded(seed);
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut tags = Vec::new();
    let mut push = |q: f64, tag: IterationTag, id: String, rng: &mut ChaCha8Rng| {
        let mut row = normal_vec(rng, dim);
        row[0] = q + noise * row[0];
        row[1] = q.powi(3) + noise * row[1];
        ids.push(id);
        rows.push(row);
        tags.push(tag);
    };
    for c in 0..=checkpoints {
        let iter = c * 1000;
        let tag = IterationTag::generated(iter, max_iter).expect("iter within range");
        let q = s_g * iter as f64 / max_iter as f64;
        for i in 0..per_checkpoint {
            push(q, tag, format!("gen-{iter:06}-{i:04}"), &mut rng);
        }
    }
    for i in 0..n_real {
        push(1.0, IterationTag::real(), format!("real-{i:05}"), &mut rng);
    }
    IterationSeries {
        features: FeatureMatrix::from_rows(ids, rows).expect("finite draws"),
        tags,
    }
}
