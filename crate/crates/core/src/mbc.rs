//! Multiple binary classifiers supervised by iteration pseudo-labels.
//!
//! Each training image gets a pseudo quality score: `1` for real images and
//! `s_g · iter / max_iter` for an image from a generator checkpoint. Head `i`
//! learns whether that score reaches threshold `T_i`; the quality score of a
//! new image is the mean of the head probabilities.
//!
//! Heads are logistic models over precomputed feature vectors, trained
//! jointly on the summed binary cross-entropy with mini-batch gradient
//! descent.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{split_indices, FeatureMatrix, IterationTag};
use crate::json;
use crate::rng;
use crate::scores::{ScoreTable, ScorerKind};

pub const DEFAULT_HEADS: usize = 8;
pub const DEFAULT_S_G: f64 = 0.9;
pub const MODEL_VERSION: u64 = 1;

/// Pseudo quality score of an image from its training-iteration tag.
pub fn pseudo_label(tag: &IterationTag, s_g: f64) -> Result<f64> {
    check_s_g(s_g)?;
    if tag.is_real {
        return Ok(1.0);
    }
    tag.validate()?;
    Ok(s_g * tag.iter as f64 / tag.max_iter as f64)
}

fn check_s_g(s_g: f64) -> Result<()> {
    if s_g > 0.0 && s_g < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("s_g must lie in (0, 1), got {s_g}")))
    }
}

/// `T_i = i / n` for `i = 1..=n`.
pub fn uniform_thresholds(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / n as f64).collect()
}

fn check_thresholds(thresholds: &[f64], s_g: f64) -> Result<()> {
    let Some(&last) = thresholds.last() else {
        return Err(Error::InvalidArgument("at least one threshold is required".into()));
    };
    if !(thresholds[0] > 0.0) || last != 1.0 || thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must increase strictly within (0, 1] and end at 1, got {thresholds:?}"
        )));
    }
    // Real images (score 1) and the best generated images (score s_g) must be
    // separated by at least one head.
    if !thresholds.iter().any(|&t| t > s_g) {
        return Err(Error::InvalidArgument(format!(
            "no threshold exceeds s_g = {s_g}"
        )));
    }
    Ok(())
}

/// Per-head targets: head `i` is positive when `score >= T_i`.
pub fn binarize_labels(pseudo_score: f64, thresholds: &[f64]) -> Vec<bool> {
    thresholds.iter().map(|&t| pseudo_score >= t).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeature {
    feature: Vec<f64>,
    tag: IterationTag,
    pseudo_score: f64,
}

impl LabeledFeature {
    pub fn new(feature: Vec<f64>, tag: IterationTag, s_g: f64) -> Result<Self> {
        let pseudo_score = pseudo_label(&tag, s_g)?;
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature has non-finite entries".into()));
        }
        Ok(Self {
            feature,
            tag,
            pseudo_score,
        })
    }

    pub fn feature(&self) -> &[f64] {
        &self.feature
    }

    pub fn tag(&self) -> IterationTag {
        self.tag
    }

    pub fn pseudo_score(&self) -> f64 {
        self.pseudo_score
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbcTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial step size; multiplied by `lr_decay` every `lr_step_epochs`.
    pub learning_rate: f64,
    pub lr_step_epochs: usize,
    pub lr_decay: f64,
    pub l2_penalty: f64,
    /// Fraction of the dataset used for fitting; the rest selects the epoch.
    pub train_fraction: f64,
    pub s_g: f64,
    pub seed: u64,
}

impl Default for MbcTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 512,
            learning_rate: 0.05,
            lr_step_epochs: 25,
            lr_decay: 0.1,
            l2_penalty: 1e-4,
            train_fraction: 0.9,
            s_g: DEFAULT_S_G,
            seed: 0,
        }
    }
}

impl MbcTrainConfig {
    fn validate(&self) -> Result<()> {
        let positive = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.lr_step_epochs > 0
            && self.lr_decay > 0.0
            && self.l2_penalty >= 0.0;
        if !positive {
            return Err(Error::InvalidArgument(format!(
                "training settings must be positive: {self:?}"
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        check_s_g(self.s_g)
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_step_epochs) as i32)
    }
}

/// A logistic head: `σ(w · x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Head {
    fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbcModel {
    thresholds: Vec<f64>,
    heads: Vec<Head>,
    s_g: f64,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct MbcFile {
    version: u64,
    thresholds: Vec<f64>,
    heads: Vec<Head>,
    s_g: f64,
    dim: usize,
}

/// Logistic function clamped into the open unit interval.
fn probability(logit: f64) -> f64 {
    let p = if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Binary cross-entropy of a logit against a 0/1 target, stable for large
/// logits.
fn bce_from_logit(logit: f64, positive: bool) -> f64 {
    // -log σ(z) = softplus(-z); -log(1 - σ(z)) = softplus(z)
    let z = if positive { -logit } else { logit };
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl MbcModel {
    pub fn new(thresholds: Vec<f64>, heads: Vec<Head>, s_g: f64, dim: usize) -> Result<Self> {
        check_s_g(s_g)?;
        check_thresholds(&thresholds, s_g)?;
        if heads.len() != thresholds.len() {
            return Err(Error::Format(format!(
                "{} heads for {} thresholds",
                heads.len(),
                thresholds.len()
            )));
        }
        for (i, h) in heads.iter().enumerate() {
            if h.weights.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: h.weights.len(),
                });
            }
            if !h.bias.is_finite() || h.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Format(format!("head {i} has non-finite parameters")));
            }
        }
        Ok(Self {
            thresholds,
            heads,
            s_g,
            dim,
        })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn s_g(&self) -> f64 {
        self.s_g
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per-head probabilities, each strictly inside `(0, 1)`.
    pub fn head_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(self.heads.iter().map(|h| probability(h.logit(x))).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        json::write_file(
            &MbcFile {
                version: MODEL_VERSION,
                thresholds: self.thresholds.clone(),
                heads: self.heads.clone(),
                s_g: self.s_g,
                dim: self.dim,
            },
            path,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: MbcFile = json::read_file(path)?;
        if file.version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                what: "MBC model",
                found: file.version,
                expected: MODEL_VERSION,
            });
        }
        Self::new(file.thresholds, file.heads, file.s_g, file.dim)
    }
}

/// Mean head probability.
pub fn score_mbc(model: &MbcModel, x: &[f64]) -> Result<f64> {
    let probs = model.head_probabilities(x)?;
    Ok(probs.iter().sum::<f64>() / probs.len() as f64)
}

pub fn score_mbc_batch(model: &MbcModel, batch: &FeatureMatrix) -> Result<ScoreTable> {
    if batch.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: batch.dim(),
        });
    }
    let raw = (0..batch.count())
        .map(|i| score_mbc(model, &batch.row_f64(i)))
        .collect::<Result<Vec<_>>>()?;
    ScoreTable::new(batch.ids().to_vec(), raw, ScorerKind::Mbc)
}

/// Outcome of [`train_mbc`].
#[derive(Debug, Clone)]
pub struct MbcTraining {
    pub model: MbcModel,
    /// Mean per-sample loss (summed over heads) on the fitting split after
    /// each epoch.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    /// Per-head validation accuracy of the kept parameters.
    pub validation_accuracy: Vec<f64>,
    /// Per-head mean validation probability of the kept parameters.
    pub validation_mean_probability: Vec<f64>,
    /// Per-head positive rate among validation labels.
    pub validation_prior: Vec<f64>,
}

/// Trains `num_heads` heads with uniform thresholds.
pub fn train_mbc(
    dataset: &[LabeledFeature],
    num_heads: usize,
    config: &MbcTrainConfig,
) -> Result<MbcTraining> {
    if num_heads == 0 {
        return Err(Error::InvalidArgument("num_heads must be at least 1".into()));
    }
    train_mbc_with_thresholds(dataset, uniform_thresholds(num_heads), config)
}

pub fn train_mbc_with_thresholds(
    dataset: &[LabeledFeature],
    thresholds: Vec<f64>,
    config: &MbcTrainConfig,
) -> Result<MbcTraining> {
    config.validate()?;
    check_thresholds(&thresholds, config.s_g)?;
    let Some(first) = dataset.first() else {
        return Err(Error::InsufficientData("training set is empty".into()));
    };
    let dim = first.feature.len();
    if let Some(bad) = dataset.iter().find(|s| s.feature.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.feature.len(),
        });
    }
    let n_heads = thresholds.len();
    let labels: Vec<Vec<bool>> = dataset
        .iter()
        .map(|s| binarize_labels(s.pseudo_score, &thresholds))
        .collect();
    for h in 0..n_heads {
        let positives = labels.iter().filter(|l| l[h]).count();
        if positives == 0 || positives == labels.len() {
            return Err(Error::SingleClassHead {
                head: h + 1,
                detail: format!(
                    "{positives} of {} samples reach threshold {}",
                    labels.len(),
                    thresholds[h]
                ),
            });
        }
    }

    let (fit_idx, val_idx) = split_indices(dataset.len(), config.train_fraction, config.seed)?;
    if fit_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} samples are too few for a train/validation split",
            dataset.len()
        )));
    }

    let scaler = Standardizer::fit(dataset, &fit_idx, dim);
    let features: Vec<Vec<f64>> = dataset.iter().map(|s| scaler.apply(&s.feature)).collect();
    let eval = |heads: &[Head], idx: &[usize]| -> f64 {
        idx.iter()
            .map(|&i| {
                heads
                    .iter()
                    .zip(&labels[i])
                    .map(|(h, &c)| bce_from_logit(h.logit(&features[i]), c))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / idx.len() as f64
    };

    let mut heads = vec![
        Head {
            weights: vec![0.0; dim],
            bias: 0.0,
        };
        n_heads
    ];
    let mut grad_w = vec![vec![0.0; dim]; n_heads];
    let mut grad_b = vec![0.0; n_heads];
    let mut rng = rng::seeded(config.seed);
    let mut order = fit_idx.clone();
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut validation_loss = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<Head>)> = None;

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad_w.iter_mut().for_each(|g| g.fill(0.0));
            grad_b.fill(0.0);
            for &i in batch {
                let x = &features[i];
                for (h, head) in heads.iter().enumerate() {
                    let target = if labels[i][h] { 1.0 } else { 0.0 };
                    let err = probability(head.logit(x)) - target;
                    grad_b[h] += err;
                    for (g, v) in grad_w[h].iter_mut().zip(x) {
                        *g += err * v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (h, head) in heads.iter_mut().enumerate() {
                for (w, g) in head.weights.iter_mut().zip(&grad_w[h]) {
                    *w -= lr * (g * scale + config.l2_penalty * *w);
                }
                head.bias -= lr * grad_b[h] * scale;
            }
        }

        let tl = eval(&heads, &fit_idx);
        let vl = eval(&heads, &val_idx);
        if !tl.is_finite() || !vl.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        train_loss.push(tl);
        validation_loss.push(vl);
        if best.as_ref().is_none_or(|b| vl < b.0) {
            best = Some((vl, epoch, heads.clone()));
        }
    }

    let (_, best_epoch, best_heads) = best.expect("epochs >= 1");
    let mut validation_accuracy = vec![0.0; n_heads];
    let mut validation_mean_probability = vec![0.0; n_heads];
    let mut validation_prior = vec![0.0; n_heads];
    for &i in &val_idx {
        for (h, head) in best_heads.iter().enumerate() {
            let p = probability(head.logit(&features[i]));
            let c = labels[i][h];
            validation_accuracy[h] += f64::from(u8::from((p >= 0.5) == c));
            validation_mean_probability[h] += p;
            validation_prior[h] += f64::from(u8::from(c));
        }
    }
    let nv = val_idx.len() as f64;
    for v in validation_accuracy
        .iter_mut()
        .chain(&mut validation_mean_probability)
        .chain(&mut validation_prior)
    {
        *v /= nv;
    }

    let heads = best_heads.into_iter().map(|h| scaler.fold(h)).collect();
    let model = MbcModel::new(thresholds, heads, config.s_g, dim)?;
    Ok(MbcTraining {
        model,
        train_loss,
        validation_loss,
        best_epoch,
        validation_accuracy,
        validation_mean_probability,
        validation_prior,
    })
}

/// Per-feature standardization learned on the fitting split and folded back
/// into the head parameters after training.
struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit(dataset: &[LabeledFeature], idx: &[usize], dim: usize) -> Self {
        let n = idx.len() as f64;
        let mut mean = vec![0.0; dim];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(&dataset[i].feature) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for &i in idx {
            for ((s, v), m) in var.iter_mut().zip(&dataset[i].feature).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, inv_std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    /// Re-expresses a head trained on standardized inputs over raw inputs.
    fn fold(&self, head: Head) -> Head {
        let weights: Vec<f64> = head
            .weights
            .iter()
            .zip(&self.inv_std)
            .map(|(w, s)| w * s)
            .collect();
        let shift: f64 = weights.iter().zip(&self.mean).map(|(w, m)| w * m).sum();
        Head {
            weights,
            bias: head.bias - shift,
        }
    }
}

/// Assembles labeled features from a matrix and per-row tags.
pub fn label_matrix(
    features: &FeatureMatrix,
    tags: &[IterationTag],
    s_g: f64,
) -> Result<Vec<LabeledFeature>> {
    if tags.len() != features.count() {
        return Err(Error::Format(format!(
            "{} tags for {} feature rows",
            tags.len(),
            features.count()
        )));
    }
    tags.iter()
        .enumerate()
        .map(|(i, tag)| LabeledFeature::new(features.row_f64(i), *tag, s_g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_label_values() {
        let tag = IterationTag::generated(2000, 4000).unwrap();
        assert_eq!(pseudo_label(&tag, 0.9).unwrap(), 0.45);
        assert_eq!(pseudo_label(&IterationTag::real(), 0.9).unwrap(), 1.0);
        let zero = IterationTag::generated(0, 4000).unwrap();
        assert_eq!(pseudo_label(&zero, 0.9).unwrap(), 0.0);
        let bad = IterationTag {
            iter: 0,
            max_iter: 0,
            is_real: false,
        };
        assert!(pseudo_label(&bad, 0.9).is_err());
        assert!(pseudo_label(&tag, 1.0).is_err());
    }

    #[test]
    fn binarize_against_eighths() {
        let t = uniform_thresholds(8);
        let labels = binarize_labels(0.45, &t);
        assert_eq!(labels, [true, true, true, false, false, false, false, false]);
        assert!(binarize_labels(1.0, &t).iter().all(|c| *c));
        assert!(binarize_labels(0.0, &t).iter().all(|c| !*c));
    }

    #[test]
    fn zero_heads_give_one_half() {
        let heads = vec![
            Head {
                weights: vec![0.0; 3],
                bias: 0.0
            };
            4
        ];
        let m = MbcModel::new(uniform_thresholds(4), heads, 0.9, 3).unwrap();
        assert_eq!(score_mbc(&m, &[1.0, -2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn averages_head_outputs() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let heads = vec![
            Head {
                weights: vec![0.0],
                bias: logit(0.9),
            },
            Head {
                weights: vec![0.0],
                bias: logit(0.3),
            },
        ];
        let m = MbcModel::new(vec![0.5, 1.0], heads, 0.9, 1).unwrap();
        assert!((score_mbc(&m, &[0.0]).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_inside_unit_interval() {
        let heads = vec![Head {
            weights: vec![1.0],
            bias: 0.0,
        }];
        let m = MbcModel::new(vec![1.0], heads, 0.9, 1).unwrap();
        let hi = score_mbc(&m, &[1e6]).unwrap();
        let lo = score_mbc(&m, &[-1e6]).unwrap();
        assert!(hi > 0.0 && hi < 1.0);
        assert!(lo > 0.0 && lo < 1.0);
    }

    #[test]
    fn threshold_validation() {
        let ok = |t: Vec<f64>| MbcModel::new(t.clone(), vec![Head { weights: vec![], bias: 0.0 }; t.len()], 0.9, 0);
        assert!(ok(vec![0.5, 1.0]).is_ok());
        assert!(ok(vec![0.5, 0.9]).is_err());
        assert!(ok(vec![0.6, 0.5, 1.0]).is_err());
        assert!(ok(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn bce_is_stable() {
        assert!((bce_from_logit(0.0, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_from_logit(800.0, true) < 1e-300);
        assert!((bce_from_logit(800.0, false) - 800.0).abs() < 1e-9);
    }
}
