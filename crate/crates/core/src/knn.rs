//! Nearest-neighbor density: the mean inverse squared distance from a query
//! to its `k` nearest reference features.
//!
//! Search is an exact linear scan. Neighbors are ordered by squared
//! Euclidean distance, ties going to the earlier reference row.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scores::{ScoreTable, ScorerKind};

/// Raw score given to exact matches when no row in the batch has a finite
/// density to clamp to.
pub const EXACT_MATCH_FALLBACK: f64 = f64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    /// `k = 1`. Much larger values (thousands) suit large, diverse reference
    /// sets.
    fn default() -> Self {
        Self { k: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Row in the reference matrix.
    pub index: usize,
    pub sq_dist: f64,
}

impl Neighbor {
    fn order(&self, other: &Self) -> Ordering {
        self.sq_dist
            .total_cmp(&other.sq_dist)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Debug, Clone)]
pub struct KnnIndex {
    reference: FeatureMatrix,
    /// Reference rows widened once, row-major.
    wide: Vec<f64>,
}

/// Wraps `reference` for exact neighbor queries. Duplicate rows are kept as
/// distinct neighbors.
pub fn build_index(reference: FeatureMatrix) -> Result<KnnIndex> {
    if reference.is_empty() {
        return Err(Error::InsufficientData("KNN reference set is empty".into()));
    }
    if reference.dim() == 0 {
        return Err(Error::InsufficientData("features have zero width".into()));
    }
    let wide = reference.data().iter().map(|&v| f64::from(v)).collect();
    Ok(KnnIndex { reference, wide })
}

impl KnnIndex {
    pub fn len(&self) -> usize {
        self.reference.count()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn reference(&self) -> &FeatureMatrix {
        &self.reference
    }

    fn check_query(&self, x: &[f64], k: usize) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        if k == 0 || k > self.len() {
            return Err(Error::KOutOfRange { k, size: self.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("query has non-finite entries".into()));
        }
        Ok(())
    }

    /// The `k` nearest reference rows to `x`, closest first.
    pub fn neighbors(&self, x: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.check_query(x, k)?;
        let dim = self.dim();
        let mut all: Vec<Neighbor> = self
            .wide
            .chunks_exact(dim)
            .enumerate()
            .map(|(index, row)| Neighbor {
                index,
                sq_dist: sq_dist(x, row),
            })
            .collect();
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, Neighbor::order);
            all.truncate(k);
        }
        all.sort_unstable_by(Neighbor::order);
        Ok(all)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(1/k) Σ 1/‖x − x_j‖²` over the `k` nearest reference rows.
///
/// A zero distance is reported as [`Error::ExactMatch`] carrying the id of
/// the coinciding reference row.
pub fn knn_density(index: &KnnIndex, x: &[f64], k: usize) -> Result<f64> {
    let neighbors = index.neighbors(x, k)?;
    if let Some(hit) = neighbors.iter().find(|n| n.sq_dist == 0.0) {
        return Err(Error::ExactMatch {
            id: index.reference.ids()[hit.index].clone(),
        });
    }
    let sum: f64 = neighbors.iter().map(|n| 1.0 / n.sq_dist).sum();
    Ok(sum / k as f64)
}

/// Scores each row of `batch` with [`knn_density`].
///
/// Rows that coincide with a reference point are flagged and receive the
/// largest finite score in the batch, or [`EXACT_MATCH_FALLBACK`] when every
/// row coincides.
pub fn score_knn(index: &KnnIndex, batch: &FeatureMatrix, k: usize) -> Result<ScoreTable> {
    if batch.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: batch.dim(),
        });
    }
    if k == 0 || k > index.len() {
        return Err(Error::KOutOfRange { k, size: index.len() });
    }
    let results: Vec<Result<f64>> = (0..batch.count())
        .into_par_iter()
        .map(|i| knn_density(index, &batch.row_f64(i), k))
        .collect();
    let mut raw = Vec::with_capacity(results.len());
    let mut flagged = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(v) if v.is_finite() => {
                raw.push(v);
                flagged.push(false);
            }
            // Subnormal distances can overflow the reciprocal; treat as a match.
            Ok(_) | Err(Error::ExactMatch { .. }) => {
                raw.push(f64::NAN);
                flagged.push(true);
            }
            Err(e) => return Err(e),
        }
    }
    let clamp = raw
        .iter()
        .zip(&flagged)
        .filter(|(_, f)| !**f)
        .map(|(v, _)| *v)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .unwrap_or(EXACT_MATCH_FALLBACK);
    for (v, f) in raw.iter_mut().zip(&flagged) {
        if *f {
            *v = clamp;
        }
    }
    Ok(ScoreTable::new(batch.ids().to_vec(), raw, ScorerKind::Knn)?.with_flags(flagged))
}
