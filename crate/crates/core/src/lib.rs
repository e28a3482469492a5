//! Per-image quality scoring for generated images.
//!
//! Three scorers are provided, all operating on precomputed feature vectors:
//!
//! - [`gmm`]: a Gaussian mixture fitted to real-image features by EM; an
//!   image's score is its log-density under the mixture.
//! - [`knn`]: the mean inverse squared distance to the `k` nearest real
//!   features.
//! - [`mbc`]: `N` jointly trained binary heads supervised by pseudo-labels
//!   derived from the generator's training iteration; the score is the mean
//!   head probability.
//!
//! Scores feed into [`metrics`] (normalization, quality score, diversity
//! score, pair accuracy, histograms) and [`picker`] (quality-ranked selection
//! and hard-example loss weights). Feature vectors are exchanged through the
//! GIQF binary format in [`features`].

pub mod demo;
pub mod error;
pub mod features;
pub mod gmm;
pub mod json;
pub mod knn;
pub mod mbc;
pub mod metrics;
pub mod picker;
pub mod rng;
pub mod scores;

pub use error::{Error, ErrorCategory, Result};
pub use features::{
    pca::{apply_pca, fit_pca, PcaModel},
    read_features, split_train_val, write_features, FeatureMatrix, IterationTag,
};
pub use gmm::{
    component_log_density, fit_gmm, gmm_log_density, score_gmm, ComponentCovariance,
    CovarianceType, Covariances, EmConfig, GmmFit, GmmModel,
};
pub use knn::{build_index, knn_density, score_knn, KnnConfig, KnnIndex, Neighbor};
pub use mbc::{
    binarize_labels, pseudo_label, score_mbc, train_mbc, uniform_thresholds, LabeledFeature,
    MbcModel, MbcTrainConfig,
};
pub use metrics::{
    diversity_score, diversity_scores, normalize_jointly, normalize_scores, pair_accuracy,
    quality_score, score_histogram, DensityScorer, HistogramBin, PairDataset, PairEvaluation,
    Winner,
};
pub use picker::{ohem_weight, ohem_weights, pick_top, rank_by_score, OhemConfig};
pub use scores::{ScoreTable, ScorerKind};
