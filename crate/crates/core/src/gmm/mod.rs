//! Gaussian mixture density over real-image features.
//!
//! A fitted [`GmmModel`] scores a feature vector by its mixture log-density
//! `log Σ_i w_i N(x | μ_i, Σ_i)`. Everything is evaluated in the log domain:
//! at feature widths in the thousands the plain density underflows, and log
//! is monotone so rankings are unchanged.

mod em;
mod io;


use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scores::{ScoreTable, ScorerKind};

pub use em::{fit_gmm, fit_gmm_from_means, EmConfig, GmmFit};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Rows scored per block in [`score_gmm`].
const SCORE_BLOCK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceType {
    Full,
    Tied,
    Diag,
    Spherical,
}

impl CovarianceType {
    pub const ALL: [CovarianceType; 4] = [
        CovarianceType::Full,
        CovarianceType::Tied,
        CovarianceType::Diag,
        CovarianceType::Spherical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceType::Full => "full",
            CovarianceType::Tied => "tied",
            CovarianceType::Diag => "diag",
            CovarianceType::Spherical => "spherical",
        }
    }
}

impl std::fmt::Display for CovarianceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CovarianceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CovarianceType::Full),
            "tied" => Ok(CovarianceType::Tied),
            "diag" => Ok(CovarianceType::Diag),
            "spherical" => Ok(CovarianceType::Spherical),
            other => Err(Error::InvalidArgument(format!(
                "unknown covariance type {other:?}"
            ))),
        }
    }
}

/// Component covariances in one of the four structural encodings.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariances {
    /// One `D × D` matrix per component.
    Full(Vec<DMatrix<f64>>),
    /// A single `D × D` matrix shared by all components.
    Tied(DMatrix<f64>),
    /// One vector of per-axis variances per component.
    Diag(Vec<DVector<f64>>),
    /// One scalar variance per component.
    Spherical(Vec<f64>),
}

impl Covariances {
    pub fn covariance_type(&self) -> CovarianceType {
        match self {
            Covariances::Full(_) => CovarianceType::Full,
            Covariances::Tied(_) => CovarianceType::Tied,
            Covariances::Diag(_) => CovarianceType::Diag,
            Covariances::Spherical(_) => CovarianceType::Spherical,
        }
    }

    fn component(&self, k: usize) -> ComponentCovariance<'_> {
        match self {
            Covariances::Full(m) => ComponentCovariance::Full(&m[k]),
            Covariances::Tied(m) => ComponentCovariance::Full(m),
            Covariances::Diag(v) => ComponentCovariance::Diag(&v[k]),
            Covariances::Spherical(s) => ComponentCovariance::Spherical(s[k]),
        }
    }
}

/// The covariance of a single Gaussian.
#[derive(Debug, Clone, Copy)]
pub enum ComponentCovariance<'a> {
    Full(&'a DMatrix<f64>),
    Diag(&'a DVector<f64>),
    Spherical(f64),
}

/// Factorized form of a component covariance, ready for density evaluation.
#[derive(Debug, Clone)]
enum Factor {
    Cholesky { lower: DMatrix<f64>, log_det: f64 },
    Diag { inv_std: DVector<f64>, log_det: f64 },
    Spherical { inv_var: f64, log_det: f64 },
}

impl Factor {
    fn new(cov: ComponentCovariance<'_>, dim: usize) -> Result<Self> {
        match cov {
            ComponentCovariance::Full(m) => {
                if m.shape() != (dim, dim) {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: m.nrows(),
                    });
                }
                let asym = (m - m.transpose()).amax();
                let scale = m.amax().max(f64::MIN_POSITIVE);
                if !m.iter().all(|v| v.is_finite()) || asym > 1e-10 * scale {
                    return Err(Error::NotPositiveDefinite(
                        "matrix is not finite and symmetric".into(),
                    ));
                }
                let chol = Cholesky::<f64, Dyn>::new(m.clone()).ok_or_else(|| {
                    Error::NotPositiveDefinite("Cholesky factorization failed".into())
                })?;
                let lower = chol.unpack();
                let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
                if !log_det.is_finite() {
                    return Err(Error::NotPositiveDefinite("determinant underflow".into()));
                }
                Ok(Factor::Cholesky { lower, log_det })
            }
            ComponentCovariance::Diag(v) => {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: v.len(),
                    });
                }
                if !v.iter().all(|x| x.is_finite() && *x > 0.0) {
                    return Err(Error::NotPositiveDefinite(
                        "diagonal entries must be positive".into(),
                    ));
                }
                Ok(Factor::Diag {
                    inv_std: v.map(|x| 1.0 / x.sqrt()),
                    log_det: v.iter().map(|x| x.ln()).sum(),
                })
            }
            ComponentCovariance::Spherical(s) => {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::NotPositiveDefinite(
                        "spherical variance must be positive".into(),
                    ));
                }
                Ok(Factor::Spherical {
                    inv_var: 1.0 / s,
                    log_det: dim as f64 * s.ln(),
                })
            }
        }
    }

    fn log_det(&self) -> f64 {
        match self {
            Factor::Cholesky { log_det, .. }
            | Factor::Diag { log_det, .. }
            | Factor::Spherical { log_det, .. } => *log_det,
        }
    }

    /// Squared Mahalanobis distance of every column of `centered` (`D × n`).
    fn mahalanobis(&self, mut centered: DMatrix<f64>) -> DVector<f64> {
        match self {
            Factor::Cholesky { lower, .. } => {
                lower.solve_lower_triangular_mut(&mut centered);
                column_sq_norms(&centered)
            }
            Factor::Diag { inv_std, .. } => {
                for mut col in centered.column_iter_mut() {
                    col.component_mul_assign(inv_std);
                }
                column_sq_norms(&centered)
            }
            Factor::Spherical { inv_var, .. } => column_sq_norms(&centered) * *inv_var,
        }
    }

    /// Log-density of every column of `xt` (`D × n`).
    fn log_density_columns(&self, mean: &DVector<f64>, xt: &DMatrix<f64>) -> DVector<f64> {
        let mut centered = xt.clone();
        for mut col in centered.column_iter_mut() {
            col -= mean;
        }
        let dim = mean.len() as f64;
        let constant = -0.5 * (dim * LN_2PI + self.log_det());
        self.mahalanobis(centered).map(|m| constant - 0.5 * m)
    }
}

fn column_sq_norms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.ncols(),
        m.column_iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()),
    )
}

/// `log Σ exp(values)`, stable for any finite input.
pub(crate) fn logsumexp<'a>(values: impl IntoIterator<Item = &'a f64> + Copy) -> f64 {
    let max = values.into_iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log of the multivariate normal density `N(x | mean, cov)`.
///
/// Full covariances go through a Cholesky factor, so the result for a
/// diagonal matrix matches the `Diag` encoding to rounding.
pub fn component_log_density(
    mean: &[f64],
    covariance: ComponentCovariance<'_>,
    x: &[f64],
) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            found: x.len(),
        });
    }
    let factor = Factor::new(covariance, mean.len())?;
    let mean = DVector::from_column_slice(mean);
    let xt = DMatrix::from_column_slice(x.len(), 1, x);
    Ok(factor.log_density_columns(&mean, &xt)[0])
}

/// A fitted mixture. Construction validates the weights and factorizes
/// every covariance, so an existing model always evaluates.
#[derive(Debug, Clone)]
pub struct GmmModel {
    weights: Vec<f64>,
    /// `M × D`.
    means: DMatrix<f64>,
    covariances: Covariances,
    factors: Vec<Factor>,
    log_weights: Vec<f64>,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.means == other.means
            && self.covariances == other.covariances
    }
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: DMatrix<f64>, covariances: Covariances) -> Result<Self> {
        let (m, dim) = means.shape();
        if m == 0 {
            return Err(Error::Format("a mixture needs at least one component".into()));
        }
        if dim == 0 {
            return Err(Error::Format("features must have at least one dimension".into()));
        }
        if weights.len() != m {
            return Err(Error::Format(format!(
                "{} weights for {m} components",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Format(format!("mixture weight {w} is not positive")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Format(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("means contain non-finite values".into()));
        }
        let n_cov = match &covariances {
            Covariances::Full(v) => v.len(),
            Covariances::Tied(_) => m,
            Covariances::Diag(v) => v.len(),
            Covariances::Spherical(v) => v.len(),
        };
        if n_cov != m {
            return Err(Error::Format(format!(
                "{n_cov} covariances for {m} components"
            )));
        }
        let factors = match &covariances {
            Covariances::Tied(shared) => {
                let f = Factor::new(ComponentCovariance::Full(shared), dim)
                    .map_err(|e| annotate(e, "tied covariance"))?;
                vec![f; m]
            }
            cov => (0..m)
                .map(|k| {
                    Factor::new(cov.component(k), dim)
                        .map_err(|e| annotate(e, &format!("component {k}")))
                })
                .collect::<Result<_>>()?,
        };
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            means,
            covariances,
            factors,
            log_weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn mean(&self, k: usize) -> DVector<f64> {
        self.means.row(k).transpose()
    }

    pub fn covariances(&self) -> &Covariances {
        &self.covariances
    }

    pub fn covariance_type(&self) -> CovarianceType {
        self.covariances.covariance_type()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.means.nrows()
    }

    /// `n × M` matrix of `log w_k + log N(x_i | μ_k, Σ_k)` for the columns of
    /// `xt` (`D × n`).
    pub(crate) fn weighted_log_prob(&self, xt: &DMatrix<f64>) -> DMatrix<f64> {
        let columns: Vec<DVector<f64>> = (0..self.n_components())
            .into_par_iter()
            .map(|k| {
                let mean = self.mean(k);
                self.factors[k].log_density_columns(&mean, xt).add_scalar(self.log_weights[k])
            })
            .collect();
        DMatrix::from_columns(&columns)
    }

    /// Mixture log-density of each column of `xt` (`D × n`).
    pub(crate) fn log_density_columns(&self, xt: &DMatrix<f64>) -> Vec<f64> {
        let lp = self.weighted_log_prob(xt);
        lp.row_iter()
            .map(|r| logsumexp(&r))
            .collect()
    }
}

fn annotate(err: Error, what: &str) -> Error {
    match err {
        Error::NotPositiveDefinite(msg) => Error::NotPositiveDefinite(format!("{what}: {msg}")),
        other => other,
    }
}

/// Mixture log-density `log p(x | λ)`.
pub fn gmm_log_density(model: &GmmModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    let xt = DMatrix::from_column_slice(x.len(), 1, x);
    Ok(model.log_density_columns(&xt)[0])
}

/// Scores each row of `batch` by its mixture log-density.
pub fn score_gmm(model: &GmmModel, batch: &FeatureMatrix) -> Result<ScoreTable> {
    if batch.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: batch.dim(),
        });
    }
    let dim = batch.dim();
    let mut raw: Vec<f64> = Vec::with_capacity(batch.count());
    let data = batch.data();
    for block in data.chunks(SCORE_BLOCK * dim) {
        let n = block.len() / dim;
        let xt = DMatrix::from_iterator(dim, n, block.iter().map(|&v| f64::from(v)));
        raw.extend(model.log_density_columns(&xt));
    }
    ScoreTable::new(batch.ids().to_vec(), raw, ScorerKind::Gmm)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn single(mean: &[f64], cov: Covariances) -> GmmModel {
        GmmModel::new(
            vec![1.0],
            DMatrix::from_row_slice(1, mean.len(), mean),
            cov,
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_2d_at_mean() {
        let m = single(&[0.0, 0.0], Covariances::Full(vec![DMatrix::identity(2, 2)]));
        let v = gmm_log_density(&m, &[0.0, 0.0]).unwrap();
        assert!((v - (1.0 / (2.0 * PI)).ln()).abs() < 1e-12);
        assert!((v + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn standard_normal_1d_at_mean() {
        let v = component_log_density(&[0.0], ComponentCovariance::Spherical(1.0), &[0.0]).unwrap();
        assert!((v + 0.918939).abs() < 1e-6);
    }

    #[test]
    fn identical_components_match_single() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let one = single(&[1.0, -1.0], Covariances::Full(vec![cov.clone()]));
        let two = GmmModel::new(
            vec![0.5, 0.5],
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]),
            Covariances::Full(vec![cov.clone(), cov]),
        )
        .unwrap();
        for x in [[0.0, 0.0], [3.0, 1.0], [-2.0, 5.0]] {
            let a = gmm_log_density(&one, &x).unwrap();
            let b = gmm_log_density(&two, &x).unwrap();
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn two_component_scalar_oracle() {
        let m = GmmModel::new(
            vec![0.3, 0.7],
            DMatrix::from_row_slice(2, 1, &[0.0, 4.0]),
            Covariances::Spherical(vec![1.0, 1.0]),
        )
        .unwrap();
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        let expected = (0.3 * phi(2.0) + 0.7 * phi(-2.0)).ln();
        let v = gmm_log_density(&m, &[2.0]).unwrap();
        assert!((v - expected).abs() < 1e-12);
        assert!((v + 2.918939).abs() < 1e-6);
    }

    #[test]
    fn encodings_agree() {
        let diag = DVector::from_vec(vec![1.0, 1.0]);
        let full = DMatrix::identity(2, 2);
        for x in [[0.3, -0.7], [5.0, 2.0], [-10.0, 0.0]] {
            let a = component_log_density(&[0.0, 0.0], ComponentCovariance::Diag(&diag), &x).unwrap();
            let b = component_log_density(&[0.0, 0.0], ComponentCovariance::Full(&full), &x).unwrap();
            let c = component_log_density(&[0.0, 0.0], ComponentCovariance::Spherical(1.0), &x).unwrap();
            assert!((a - b).abs() <= 1e-12);
            assert!((a - c).abs() <= 1e-12);
        }
    }

    #[test]
    fn dense_inverse_oracle_2d() {
        // Σ = [[2, .5], [.5, 1]], det = 1.75, Σ⁻¹ = [[1, -.5], [-.5, 2]] / 1.75.
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let det: f64 = 2.0 * 1.0 - 0.5 * 0.5;
        let inv = [[1.0 / det, -0.5 / det], [-0.5 / det, 2.0 / det]];
        let d = [1.0, 1.0];
        let quad = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
        let expected = -0.5 * quad - (2.0 * PI).ln() - 0.5 * det.ln();
        let v = component_log_density(&[0.5, -0.25], ComponentCovariance::Full(&cov), &[1.5, 0.75]).unwrap();
        assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
    }

    #[test]
    fn far_queries_stay_finite() {
        let m = single(&[0.0; 3], Covariances::Diag(vec![DVector::from_element(3, 1e-6)]));
        let v = gmm_log_density(&m, &[1e3, -1e3, 1e3]).unwrap();
        assert!(v.is_finite() && v < -1e11);
    }

    #[test]
    fn invariants_on_construction() {
        let means = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let err = GmmModel::new(vec![0.25, 0.25], means.clone(), Covariances::Spherical(vec![1.0, 1.0]))
            .unwrap_err();
        assert!(err.to_string().contains("sum to 0.5"), "{err}");
        let err = GmmModel::new(vec![0.5, 0.5], means.clone(), Covariances::Spherical(vec![1.0, -1.0]))
            .unwrap_err();
        assert!(err.to_string().contains("not positive-definite"), "{err}");
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = GmmModel::new(
            vec![1.0],
            DMatrix::zeros(1, 2),
            Covariances::Full(vec![bad]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite(_)));
    }

    #[test]
    fn dimension_checks() {
        let m = single(&[0.0, 0.0], Covariances::Spherical(vec![1.0]));
        assert!(matches!(
            gmm_log_density(&m, &[0.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        let batch = FeatureMatrix::from_rows_auto_ids([[1.0, 2.0, 3.0]]).unwrap();
        assert!(score_gmm(&m, &batch).is_err());
    }

    #[test]
    fn empty_batch_scores_to_empty_table() {
        let m = single(&[0.0, 0.0], Covariances::Spherical(vec![1.0]));
        let t = score_gmm(&m, &FeatureMatrix::empty(2)).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn mode_outscores_far_points() {
        let m = single(&[1.0, 2.0], Covariances::Spherical(vec![0.5]));
        let batch = FeatureMatrix::from_rows_auto_ids([[1.0, 2.0], [10.0, 2.0], [1.0, -30.0], [50.0, 50.0]])
            .unwrap();
        let t = score_gmm(&m, &batch).unwrap();
        let raw = t.raw();
        assert!(raw[1..].iter().all(|&v| v < raw[0]));
    }
}
