//! Feature matrices, the GIQF interchange format, PCA and train/validation
//! splitting.

pub mod giqf;
pub mod pca;

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub use giqf::{read_features, write_features};

/// `count` rows of `dim` feature values, each tagged with a unique id.
///
/// Values are stored as `f32`, the precision of the on-disk format, so a
/// write/read cycle is exact. Numerical code widens rows to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    data: Vec<f32>,
    dim: usize,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major `data`, checking every invariant.
    pub fn new(ids: Vec<String>, data: Vec<f32>, dim: usize) -> Result<Self> {
        if ids.len().checked_mul(dim) != Some(data.len()) {
            return Err(Error::Format(format!(
                "{} ids with dim {dim} need {} values, got {}",
                ids.len(),
                ids.len().saturating_mul(dim),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        check_unique(&ids)?;
        Ok(Self { ids, data, dim })
    }

    pub fn from_rows<I, R>(ids: Vec<String>, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let mut data = Vec::new();
        let mut dim = None;
        let mut count = 0;
        for row in rows {
            let row = row.as_ref();
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: row.len(),
                    })
                }
                _ => {}
            }
            data.extend(row.iter().map(|&v| v as f32));
            count += 1;
        }
        if count != ids.len() {
            return Err(Error::Format(format!(
                "{} ids for {count} rows",
                ids.len()
            )));
        }
        Self::new(ids, data, dim.unwrap_or(0))
    }

    /// Rows named `row-0`, `row-1`, ...
    pub fn from_rows_auto_ids<I, R>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let rows: Vec<R> = rows.into_iter().collect();
        let ids = (0..rows.len()).map(|i| format!("row-{i}")).collect();
        Self::from_rows(ids, rows)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            ids: Vec::new(),
            data: Vec::new(),
            dim,
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        (0..self.count()).map(move |i| self.row(i))
    }

    /// `count × dim` matrix of widened values.
    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.count(),
            self.dim,
            self.data.iter().map(|&v| f64::from(v)),
        )
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(indices.len());
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            ids.push(self.ids[i].clone());
            data.extend_from_slice(self.row(i));
        }
        Self {
            ids,
            data,
            dim: self.dim,
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_features(self, path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_features(path)
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// Position of a generated image in its generator's training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationTag {
    pub iter: u64,
    pub max_iter: u64,
    pub is_real: bool,
}

impl IterationTag {
    pub fn generated(iter: u64, max_iter: u64) -> Result<Self> {
        let tag = Self {
            iter,
            max_iter,
            is_real: false,
        };
        tag.validate()?;
        Ok(tag)
    }

    pub fn real() -> Self {
        Self {
            iter: 0,
            max_iter: 1,
            is_real: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_real {
            return Ok(());
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        if self.iter > self.max_iter {
            return Err(Error::InvalidArgument(format!(
                "iter {} exceeds max_iter {}",
                self.iter, self.max_iter
            )));
        }
        Ok(())
    }
}

/// Splits `matrix` into a first part of `round(ratio · N)` rows and the rest.
///
/// Row indices are shuffled with [`SplitMix64`] seeded by `seed`; the first
/// `round(ratio · N)` shuffled indices form the first part. Both parts keep
/// the input's relative row order. Rounding is half away from zero.
pub fn split_train_val(
    matrix: &FeatureMatrix,
    ratio: f64,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let (first, second) = split_indices(matrix.count(), ratio, seed)?;
    Ok((matrix.select(&first), matrix.select(&second)))
}

pub(crate) fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "split needs at least 2 rows, got {n}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let take = (ratio * n as f64).round() as usize;
    let mut first = order[..take].to_vec();
    let mut second = order[take..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}
