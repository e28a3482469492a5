//! Principal component projection for reducing feature dimension before GMM
//! fitting.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::json;

/// Cumulative-variance comparisons allow this much relative slack so that a
/// fraction of exactly 1.0 does not pull in numerically-zero directions.
const FRACTION_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// `D × d`, orthonormal columns sorted by decreasing variance.
    basis: DMatrix<f64>,
    explained_variance: Vec<f64>,
    retained_fraction: f64,
}

#[derive(Serialize, Deserialize)]
struct PcaFile {
    mean: Vec<f64>,
    /// Row-major `D × d`.
    basis: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
    retained_fraction: f64,
}

impl PcaModel {
    pub fn new(
        mean: DVector<f64>,
        basis: DMatrix<f64>,
        explained_variance: Vec<f64>,
        retained_fraction: f64,
    ) -> Result<Self> {
        let (d_in, d_out) = basis.shape();
        if mean.len() != d_in {
            return Err(Error::DimensionMismatch {
                expected: d_in,
                found: mean.len(),
            });
        }
        if explained_variance.len() != d_out || d_out > d_in {
            return Err(Error::Format(format!(
                "basis is {d_in}×{d_out} but {} variances are given",
                explained_variance.len()
            )));
        }
        if !(retained_fraction > 0.0 && retained_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "retained fraction must lie in (0, 1], got {retained_fraction}"
            )));
        }
        if explained_variance.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || explained_variance.windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::Format(
                "explained variances must be nonnegative and non-increasing".into(),
            ));
        }
        let gram = basis.transpose() * &basis;
        let off = (gram - DMatrix::<f64>::identity(d_out, d_out)).amax();
        if !(off <= 1e-6) {
            return Err(Error::Format(format!(
                "basis columns are not orthonormal (max deviation {off:e})"
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("mean has non-finite entries".into()));
        }
        Ok(Self {
            mean,
            basis,
            explained_variance,
            retained_fraction,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn retained_fraction(&self) -> f64 {
        self.retained_fraction
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PcaFile {
            mean: self.mean.iter().copied().collect(),
            basis: self
                .basis
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            explained_variance: self.explained_variance.clone(),
            retained_fraction: self.retained_fraction,
        };
        json::write_file(&file, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: PcaFile = json::read_file(path)?;
        let d_in = file.mean.len();
        let d_out = file.explained_variance.len();
        if file.basis.len() != d_in || file.basis.iter().any(|r| r.len() != d_out) {
            return Err(Error::Format(format!(
                "basis must be {d_in} rows of {d_out} values"
            )));
        }
        let basis = DMatrix::from_row_iterator(d_in, d_out, file.basis.into_iter().flatten());
        Self::new(
            DVector::from_vec(file.mean),
            basis,
            file.explained_variance,
            file.retained_fraction,
        )
    }
}

/// Fits principal axes keeping the fewest components whose eigenvalues sum
/// to at least `retained_fraction` of the total.
///
/// The covariance uses denominator `N - 1`. Eigenvectors are sign-fixed so
/// their largest-magnitude entry is positive; equal eigenvalues are ordered
/// by the axis of that entry.
pub fn fit_pca(matrix: &FeatureMatrix, retained_fraction: f64) -> Result<PcaModel> {
    let n = matrix.count();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if !(retained_fraction > 0.0 && retained_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "retained fraction must lie in (0, 1], got {retained_fraction}"
        )));
    }
    let x = matrix.to_dmatrix();
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;

    let eig = SymmetricEigen::new(cov);
    let dim = matrix.dim();
    let mut axes: Vec<(f64, usize, DVector<f64>)> = (0..dim)
        .map(|j| {
            let mut v = eig.eigenvectors.column(j).into_owned();
            let lead = v.iamax();
            if v[lead] < 0.0 {
                v.neg_mut();
            }
            (eig.eigenvalues[j].max(0.0), lead, v)
        })
        .collect();
    axes.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let total: f64 = axes.iter().map(|a| a.0).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let target = retained_fraction * total * (1.0 - FRACTION_SLACK);
    let mut acc = 0.0;
    let mut keep = dim;
    for (i, (value, _, _)) in axes.iter().enumerate() {
        acc += value;
        if acc >= target {
            keep = i + 1;
            break;
        }
    }

    let columns: Vec<DVector<f64>> = axes[..keep].iter().map(|a| a.2.clone()).collect();
    let basis = DMatrix::from_columns(&columns);
    let explained = axes[..keep].iter().map(|a| a.0).collect();
    PcaModel::new(mean, basis, explained, retained_fraction)
}

/// Projects every row onto the model basis: `basisᵀ (row − mean)`.
pub fn apply_pca(model: &PcaModel, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    if matrix.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: matrix.dim(),
        });
    }
    let mut data = Vec::with_capacity(matrix.count() * model.output_dim());
    let mut centered = DVector::zeros(model.input_dim());
    for row in matrix.rows() {
        for (c, (&v, m)) in centered.iter_mut().zip(row.iter().zip(model.mean.iter())) {
            *c = f64::from(v) - m;
        }
        let projected = model.basis.tr_mul(&centered);
        data.extend(projected.iter().map(|&v| v as f32));
    }
    FeatureMatrix::new(matrix.ids().to_vec(), data, model.output_dim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_y_equals_x_keeps_one_axis() {
        let m = FeatureMatrix::from_rows_auto_ids((0..20).map(|i| {
            let t = i as f64 - 9.5;
            [t, t]
        }))
        .unwrap();
        let pca = fit_pca(&m, 0.9).unwrap();
        assert_eq!(pca.output_dim(), 1);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((pca.basis()[(0, 0)] - s).abs() < 1e-12);
        assert!((pca.basis()[(1, 0)] - s).abs() < 1e-12);
    }

    #[test]
    fn isotropic_data_keeps_both_axes_at_full_fraction() {
        let m = FeatureMatrix::from_rows_auto_ids([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
            .unwrap();
        let pca = fit_pca(&m, 1.0).unwrap();
        assert_eq!(pca.output_dim(), 2);
        assert_eq!(pca.explained_variance()[0], pca.explained_variance()[1]);
        // Tie broken by axis order.
        assert!((pca.basis()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_row_projects_to_origin() {
        let m = FeatureMatrix::from_rows_auto_ids([[1.0, 2.0], [3.0, 5.0], [5.0, 5.0]]).unwrap();
        let pca = fit_pca(&m, 1.0).unwrap();
        let mean: Vec<f64> = pca.mean().iter().copied().collect();
        let q = FeatureMatrix::from_rows_auto_ids([mean]).unwrap();
        let out = apply_pca(&pca, &q).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn identity_basis_is_identity_map() {
        let pca = PcaModel::new(DVector::zeros(3), DMatrix::identity(3, 3), vec![1.0; 3], 1.0).unwrap();
        let m = FeatureMatrix::from_rows_auto_ids([[1.5, -2.0, 3.25], [0.0, 7.0, -1.0]]).unwrap();
        assert_eq!(apply_pca(&pca, &m).unwrap(), m);
    }

    #[test]
    fn errors() {
        let one = FeatureMatrix::from_rows_auto_ids([[1.0, 2.0]]).unwrap();
        assert!(matches!(fit_pca(&one, 0.9), Err(Error::InsufficientData(_))));
        let same = FeatureMatrix::from_rows_auto_ids([[1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!(matches!(fit_pca(&same, 0.9), Err(Error::ZeroVariance)));
        let m = FeatureMatrix::from_rows_auto_ids([[1.0, 2.0], [3.0, 1.0]]).unwrap();
        assert!(matches!(fit_pca(&m, 0.0), Err(Error::InvalidArgument(_))));
        let pca = fit_pca(&m, 1.0).unwrap();
        let wrong = FeatureMatrix::from_rows_auto_ids([[1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(apply_pca(&pca, &wrong), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let m = FeatureMatrix::from_rows_auto_ids([[1.0, 2.0, 0.5], [3.0, 1.0, -1.0], [0.3, 0.1, 2.0]])
            .unwrap();
        let pca = fit_pca(&m, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca.json");
        pca.save(&path).unwrap();
        assert_eq!(PcaModel::load(&path).unwrap(), pca);
    }
}
