use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use giqa_core::CovarianceType;
use serde::Serialize;

/// Per-image quality scoring for generated images from precomputed
/// feature vectors.
///
/// Exit codes: 0 success, 2 argument error, 3 data error, 4 numerical
/// failure. GIQA_THREADS caps internal parallelism.
#[derive(Debug, Parser)]
#[command(name = "giqa", version)]
pub struct Cli {
    /// Where to write the run manifest. Defaults to `<out>.manifest.json`,
    /// or `giqa-<command>.manifest.json` for commands without `--out`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write the bundled synthetic 2D dataset into a directory.
    Demo(DemoArgs),
    /// Fit a Gaussian mixture to real-image features.
    FitGmm(FitGmmArgs),
    /// Register a real-image feature file as a KNN reference set.
    BuildIndex(BuildIndexArgs),
    /// Score a batch of features with a fitted model.
    Score(ScoreArgs),
    /// Accuracy of a score table on labeled image pairs.
    EvalPairs(EvalPairsArgs),
    /// Quality score: mean normalized score of one or more tables.
    Qs(QsArgs),
    /// Diversity score: real images scored under models of generated sets.
    Ds(DsArgs),
    /// Keep the best-scoring fraction of images.
    Pick(PickArgs),
    /// Hard-example loss weights for a normalized score table.
    Weights(WeightsArgs),
    /// Train the multiple-binary-classifier scorer.
    FitMbc(FitMbcArgs),
    /// Fit a PCA projection retaining a fraction of the variance.
    Pca(PcaArgs),
    /// Apply a fitted PCA projection to a feature file.
    Project(ProjectArgs),
    /// Split a feature file into two parts with a seeded shuffle.
    Split(SplitArgs),
    /// Histogram of normalized scores.
    Histogram(HistogramArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Demo(_) => "demo",
            Command::FitGmm(_) => "fit-gmm",
            Command::BuildIndex(_) => "build-index",
            Command::Score(_) => "score",
            Command::EvalPairs(_) => "eval-pairs",
            Command::Qs(_) => "qs",
            Command::Ds(_) => "ds",
            Command::Pick(_) => "pick",
            Command::Weights(_) => "weights",
            Command::FitMbc(_) => "fit-mbc",
            Command::Pca(_) => "pca",
            Command::Project(_) => "project",
            Command::Split(_) => "split",
            Command::Histogram(_) => "histogram",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    Full,
    Tied,
    Diag,
    Spherical,
}

impl From<Covariance> for CovarianceType {
    fn from(c: Covariance) -> Self {
        match c {
            Covariance::Full => CovarianceType::Full,
            Covariance::Tied => CovarianceType::Tied,
            Covariance::Diag => CovarianceType::Diag,
            Covariance::Spherical => CovarianceType::Spherical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gmm,
    Knn,
    Mbc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMethod {
    Gmm,
    Knn,
}

#[derive(Debug, Args, Serialize)]
pub struct DemoArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GmmParams {
    /// Number of mixture components.
    #[arg(long, default_value_t = 7, value_parser = clap::value_parser!(u64).range(1..))]
    pub components: u64,
    #[arg(long, value_enum, default_value_t = Covariance::Full)]
    pub covariance: Covariance,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iter: u64,
    /// Relative convergence tolerance on the mean log-likelihood.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub reg_covar: f64,
    /// Independent EM restarts; the best final likelihood wins.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_init: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitGmmArgs {
    /// Real-image features (GIQF).
    #[arg(long)]
    pub input: PathBuf,
    /// Model file to write (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub gmm: GmmParams,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildIndexArgs {
    /// Real-image features (GIQF).
    #[arg(long)]
    pub input: PathBuf,
    /// Index manifest to write (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Default neighbor count stored with the index.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// GMM or MBC model file, or KNN index manifest.
    #[arg(long)]
    pub model: PathBuf,
    /// Features to score (GIQF).
    #[arg(long)]
    pub input: PathBuf,
    /// Score table to write (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Neighbor count for KNN; defaults to the value stored in the index.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Add a min-max normalized column.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalPairsArgs {
    /// Score table (CSV).
    #[arg(long)]
    pub scores: PathBuf,
    /// Labeled pairs (CSV: id_a,id_b,winner).
    #[arg(long)]
    pub pairs: PathBuf,
    /// Per-pair results to write (CSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct QsArgs {
    /// Score tables; several tables are normalized together.
    #[arg(long, required = true)]
    pub scores: Vec<PathBuf>,
    /// Restrict each table to the ids listed in this file (one per line),
    /// after normalization.
    #[arg(long)]
    pub subset: Option<PathBuf>,
    /// Results to write (CSV: table,qs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DsArgs {
    /// Real-image features (GIQF).
    #[arg(long)]
    pub real: PathBuf,
    /// Generated-image features (GIQF); several sets are normalized together.
    #[arg(long, required = true)]
    pub generated: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = DensityMethod::Knn)]
    pub method: DensityMethod,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub gmm: GmmParams,
    /// Results to write (CSV: generated,ds).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PickArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Fraction of images to keep, in (0, 1].
    #[arg(long)]
    pub rate: f64,
    /// Kept ids, best first, one per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct WeightsArgs {
    /// Score table; normalized here if it has no normalized column.
    #[arg(long)]
    pub scores: PathBuf,
    /// Quality threshold: normalized scores strictly below it are up-weighted.
    #[arg(long, default_value_t = 0.2)]
    pub tq: f64,
    /// Loss weight for scores below the threshold.
    #[arg(long, default_value_t = 2.0)]
    pub wl: f64,
    /// Weights to write (CSV: id,weight).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitMbcArgs {
    /// Training set: JSON lines of {feature_file, row, iter, max_iter,
    /// is_real}. Feature paths are relative to this file.
    #[arg(long)]
    pub train: PathBuf,
    /// Model file to write (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of binary heads.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub heads: u64,
    /// Pseudo-label of the final generator checkpoint, in (0, 1).
    #[arg(long, default_value_t = 0.9)]
    pub sg: f64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2_penalty: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-epoch losses to write (CSV: epoch,train_loss,validation_loss).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PcaArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Projection model to write (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of total variance to retain, in (0, 1].
    #[arg(long, default_value_t = 0.95)]
    pub pca_variance: f64,
    /// Also write the projected input features here (GIQF).
    #[arg(long)]
    pub transformed: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ProjectArgs {
    /// Projection model (JSON).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Fraction of rows in the first part, in (0, 1).
    #[arg(long, default_value_t = 0.9)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// First part (GIQF).
    #[arg(long)]
    pub out: PathBuf,
    /// Second part (GIQF).
    #[arg(long)]
    pub rest: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct HistogramArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub bins: u64,
    /// Histogram to write (CSV: bin_low,bin_high,count).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long = "from")]
    pub from: PathBuf,
}
