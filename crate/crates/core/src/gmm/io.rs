//! JSON persistence for [`GmmModel`].

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CovarianceType, Covariances, GmmModel};
use crate::error::{Error, Result};
use crate::json;

pub const MODEL_VERSION: u64 = 1;

/// On-disk layout. `covariances` depends on `covariance_type`:
/// full: `M × D × D`; tied: `D × D`; diag: `M × D`; spherical: `M`.
#[derive(Serialize, Deserialize)]
struct GmmFile {
    version: u64,
    covariance_type: CovarianceType,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: serde_json::Value,
    dim: usize,
    n_components: usize,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format(format!("{what} must be {nrows}×{ncols}")));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.into_iter().flatten()))
}

impl GmmModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        json::write_file(&self.to_file()?, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: GmmFile = json::read_file(path)?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> Result<String> {
        json::to_string(&self.to_file()?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    fn to_file(&self) -> Result<GmmFile> {
        let covariances = match &self.covariances {
            Covariances::Full(ms) => serde_json::to_value(ms.iter().map(matrix_rows).collect::<Vec<_>>()),
            Covariances::Tied(m) => serde_json::to_value(matrix_rows(m)),
            Covariances::Diag(vs) => serde_json::to_value(
                vs.iter().map(|v| v.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            ),
            Covariances::Spherical(s) => serde_json::to_value(s),
        }?;
        Ok(GmmFile {
            version: MODEL_VERSION,
            covariance_type: self.covariance_type(),
            weights: self.weights.clone(),
            means: matrix_rows(&self.means),
            covariances,
            dim: self.dim(),
            n_components: self.n_components(),
        })
    }

    fn from_file(file: GmmFile) -> Result<Self> {
        if file.version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                what: "GMM model",
                found: file.version,
                expected: MODEL_VERSION,
            });
        }
        let (m, d) = (file.n_components, file.dim);
        let means = rows_to_matrix(file.means, m, d, "means")?;
        let covariances = match file.covariance_type {
            CovarianceType::Full => {
                let ms: Vec<Vec<Vec<f64>>> = serde_json::from_value(file.covariances)?;
                if ms.len() != m {
                    return Err(Error::Format(format!("expected {m} covariance matrices")));
                }
                Covariances::Full(
                    ms.into_iter()
                        .map(|rows| rows_to_matrix(rows, d, d, "covariance"))
                        .collect::<Result<_>>()?,
                )
            }
            CovarianceType::Tied => {
                let rows: Vec<Vec<f64>> = serde_json::from_value(file.covariances)?;
                Covariances::Tied(rows_to_matrix(rows, d, d, "tied covariance")?)
            }
            CovarianceType::Diag => {
                let vs: Vec<Vec<f64>> = serde_json::from_value(file.covariances)?;
                if vs.len() != m || vs.iter().any(|v| v.len() != d) {
                    return Err(Error::Format(format!("diag covariances must be {m}×{d}")));
                }
                Covariances::Diag(vs.into_iter().map(DVector::from_vec).collect())
            }
            CovarianceType::Spherical => {
                Covariances::Spherical(serde_json::from_value(file.covariances)?)
            }
        };
        GmmModel::new(file.weights, means, covariances)
    }
}
