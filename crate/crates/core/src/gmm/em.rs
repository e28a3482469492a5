//! Expectation-maximization for [`GmmModel`].
//!
//! Means are seeded by k-means++, samples are hard-assigned to the nearest
//! seed for the first M-step, and soft responsibilities drive every later
//! step. Each M-step adds `reg_covar` to covariance diagonals. A component
//! whose responsibility mass vanishes is re-seeded at the sample the current
//! model explains worst.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::{logsumexp, CovarianceType, Covariances, GmmModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng;

/// Responsibility mass below which a component counts as collapsed.
const MIN_COMPONENT_MASS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_em_iters: usize,
    /// Stop once the mean log-likelihood improves by less than
    /// `tol · max(|previous|, 1)`.
    pub tol: f64,
    pub reg_covar: f64,
    pub n_init: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_em_iters: 200,
            tol: 1e-4,
            reg_covar: 1e-6,
            n_init: 1,
            seed: 0,
        }
    }
}

impl EmConfig {
    fn validate(&self) -> Result<()> {
        if self.max_em_iters == 0 || self.n_init == 0 {
            return Err(Error::InvalidArgument(
                "max_em_iters and n_init must be positive".into(),
            ));
        }
        if !(self.tol >= 0.0) || !(self.reg_covar >= 0.0) {
            return Err(Error::InvalidArgument(
                "tol and reg_covar must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Result of [`fit_gmm`]: the best model over all restarts and its
/// convergence history.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean per-sample training log-likelihood after each E-step. The last
    /// entry belongs to `model`.
    pub log_likelihood_trace: Vec<f64>,
    /// Trace positions reached through an M-step that re-seeded a collapsed
    /// component. Monotonicity does not hold across these steps.
    pub reseeded_steps: Vec<usize>,
    pub converged: bool,
    /// Index of the restart that produced `model`.
    pub best_init: usize,
}

impl GmmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().expect("trace is never empty")
    }

    /// Largest decrease between consecutive trace entries, ignoring steps
    /// that re-seeded a component. Zero when the trace never decreases.
    pub fn worst_decrease(&self) -> f64 {
        self.log_likelihood_trace
            .windows(2)
            .enumerate()
            .filter(|(i, _)| !self.reseeded_steps.contains(&(i + 1)))
            .map(|(_, w)| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

/// Fits an `n_components` mixture to `train` by EM.
pub fn fit_gmm(
    train: &FeatureMatrix,
    n_components: usize,
    covariance_type: CovarianceType,
    config: &EmConfig,
) -> Result<GmmFit> {
    config.validate()?;
    let data = TrainData::new(train, n_components)?;
    let mut rng = rng::seeded(config.seed);
    let mut best: Option<GmmFit> = None;
    for init in 0..config.n_init {
        let seeds = kmeans_plus_plus(&data.x, n_components, &mut rng);
        let mut fit = run_em(&data, seeds, covariance_type, config)?;
        fit.best_init = init;
        let better = match &best {
            None => true,
            Some(b) => fit.final_log_likelihood() > b.final_log_likelihood(),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Runs EM from caller-supplied initial means (`M × D`) instead of
/// k-means++ seeding. Restarts are not performed.
pub fn fit_gmm_from_means(
    train: &FeatureMatrix,
    initial_means: &DMatrix<f64>,
    covariance_type: CovarianceType,
    config: &EmConfig,
) -> Result<GmmFit> {
    config.validate()?;
    let data = TrainData::new(train, initial_means.nrows())?;
    if initial_means.ncols() != data.x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: data.x.ncols(),
            found: initial_means.ncols(),
        });
    }
    run_em(&data, initial_means.clone(), covariance_type, config)
}

struct TrainData {
    /// `N × D`.
    x: DMatrix<f64>,
    /// `D × N`.
    xt: DMatrix<f64>,
}

impl TrainData {
    fn new(train: &FeatureMatrix, n_components: usize) -> Result<Self> {
        if n_components == 0 {
            return Err(Error::InvalidArgument("n_components must be at least 1".into()));
        }
        if train.dim() == 0 {
            return Err(Error::InsufficientData("features have zero width".into()));
        }
        if train.count() < n_components {
            return Err(Error::InsufficientData(format!(
                "{} samples cannot support {n_components} components",
                train.count()
            )));
        }
        let x = train.to_dmatrix();
        let xt = x.transpose();
        Ok(Self { x, xt })
    }

    fn n(&self) -> usize {
        self.x.nrows()
    }
}

fn run_em(
    data: &TrainData,
    seeds: DMatrix<f64>,
    covariance_type: CovarianceType,
    config: &EmConfig,
) -> Result<GmmFit> {
    let n = data.n();
    let m = seeds.nrows();
    let fallback = FallbackCovariance::new(&data.x, covariance_type, config.reg_covar);
    let max_reseeds = 10 * m;
    let mut reseeds = 0;

    // Hard assignment to the nearest seed; "worst explained" = farthest from
    // its seed until a model exists.
    let mut resp = DMatrix::<f64>::zeros(n, m);
    let mut sample_fit = Vec::with_capacity(n);
    for i in 0..n {
        let row = data.x.row(i);
        let (best, dist) = (0..m)
            .map(|k| (k, (row - seeds.row(k)).norm_squared()))
            .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
        resp[(i, best)] = 1.0;
        sample_fit.push(-dist);
    }

    let (mut model, reseeded) = m_step(data, &resp, &sample_fit, covariance_type, config, &fallback)?;
    reseeds += reseeded;

    let mut trace = Vec::new();
    let mut reseeded_steps = Vec::new();
    let mut converged = false;
    for iter in 0..=config.max_em_iters {
        let (mean_ll, per_sample, new_resp) = e_step(&model, data);
        if !mean_ll.is_finite() {
            return Err(Error::Degenerate(format!(
                "log-likelihood became {mean_ll} at iteration {iter}"
            )));
        }
        trace.push(mean_ll);
        if let [.., prev, last] = trace[..] {
            if last - prev < config.tol * prev.abs().max(1.0) && !reseeded_steps.contains(&(trace.len() - 1)) {
                converged = true;
                break;
            }
        }
        if iter == config.max_em_iters {
            break;
        }
        resp = new_resp;
        let (next, reseeded) = m_step(data, &resp, &per_sample, covariance_type, config, &fallback)?;
        if reseeded > 0 {
            reseeds += reseeded;
            reseeded_steps.push(trace.len());
            if reseeds > max_reseeds {
                return Err(Error::Degenerate(format!(
                    "components collapsed {reseeds} times"
                )));
            }
        }
        model = next;
    }

    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
        reseeded_steps,
        converged,
        best_init: 0,
    })
}

/// Returns the mean log-likelihood, per-sample log-likelihoods and the
/// `N × M` responsibilities.
fn e_step(model: &GmmModel, data: &TrainData) -> (f64, Vec<f64>, DMatrix<f64>) {
    let mut lp = model.weighted_log_prob(&data.xt);
    let mut per_sample = Vec::with_capacity(data.n());
    for i in 0..lp.nrows() {
        let mut row = lp.row_mut(i);
        let norm = logsumexp(&row);
        row.apply(|v| *v = (*v - norm).exp());
        per_sample.push(norm);
    }
    let mean = per_sample.iter().sum::<f64>() / data.n() as f64;
    (mean, per_sample, lp)
}

/// Covariance assigned to a re-seeded component: the whole-data estimate.
struct FallbackCovariance {
    full: DMatrix<f64>,
    diag: DVector<f64>,
}

impl FallbackCovariance {
    fn new(x: &DMatrix<f64>, kind: CovarianceType, reg: f64) -> Self {
        let n = x.nrows() as f64;
        let mean = x.row_mean();
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        let diag = DVector::from_iterator(
            x.ncols(),
            centered.column_iter().map(|c| c.norm_squared() / n + reg),
        );
        let full = if kind == CovarianceType::Full {
            let mut cov = centered.tr_mul(&centered) / n;
            cov.set_diagonal(&diag);
            cov
        } else {
            DMatrix::zeros(0, 0)
        };
        Self { full, diag }
    }
}

struct ComponentStats {
    mass: f64,
    mean: DVector<f64>,
    /// Unregularized scatter `Σ r (x − μ)(x − μ)ᵀ` (full/tied) or its
    /// diagonal (diag/spherical).
    scatter: Scatter,
}

enum Scatter {
    Full(DMatrix<f64>),
    Diag(DVector<f64>),
}

fn component_stats(data: &TrainData, resp: &DMatrix<f64>, k: usize, full: bool) -> ComponentStats {
    let r = resp.column(k);
    let mass: f64 = r.iter().sum();
    let mean = if mass > 0.0 {
        &data.xt * r / mass
    } else {
        DVector::zeros(data.x.ncols())
    };
    let mut centered = data.xt.clone();
    for (mut col, &w) in centered.column_iter_mut().zip(r.iter()) {
        col -= &mean;
        col *= w.sqrt();
    }
    let scatter = if full {
        let s = &centered * centered.transpose();
        Scatter::Full((&s + s.transpose()) * 0.5)
    } else {
        Scatter::Diag(DVector::from_iterator(
            centered.nrows(),
            centered.row_iter().map(|r| r.norm_squared()),
        ))
    };
    ComponentStats {
        mass,
        mean,
        scatter,
    }
}

fn m_step(
    data: &TrainData,
    resp: &DMatrix<f64>,
    sample_fit: &[f64],
    kind: CovarianceType,
    config: &EmConfig,
    fallback: &FallbackCovariance,
) -> Result<(GmmModel, usize)> {
    let n = data.n();
    let m = resp.ncols();
    let dim = data.x.ncols();
    let full = matches!(kind, CovarianceType::Full | CovarianceType::Tied);
    let mut stats: Vec<ComponentStats> = (0..m)
        .into_par_iter()
        .map(|k| component_stats(data, resp, k, full))
        .collect();

    // Re-seed collapsed components at the worst-explained samples.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sample_fit[a].total_cmp(&sample_fit[b]).then(a.cmp(&b)));
    let mut next_worst = order.into_iter();
    let mut reseeded = vec![false; m];
    for (k, s) in stats.iter_mut().enumerate() {
        if s.mass >= MIN_COMPONENT_MASS {
            continue;
        }
        let i = next_worst
            .next()
            .ok_or_else(|| Error::Degenerate("no sample left to re-seed a component".into()))?;
        s.mass = 1.0;
        s.mean = data.xt.column(i).into_owned();
        reseeded[k] = true;
    }
    let n_reseeded = reseeded.iter().filter(|r| **r).count();

    let total_mass: f64 = stats.iter().map(|s| s.mass).sum();
    let weights: Vec<f64> = stats.iter().map(|s| s.mass / total_mass).collect();
    let means = DMatrix::from_fn(m, dim, |k, d| stats[k].mean[d]);
    let reg = config.reg_covar;

    let covariances = match kind {
        CovarianceType::Full => Covariances::Full(
            stats
                .iter()
                .zip(&reseeded)
                .map(|(s, &re)| match (&s.scatter, re) {
                    (_, true) => fallback.full.clone(),
                    (Scatter::Full(sc), false) => {
                        let mut c = sc / s.mass;
                        for d in 0..dim {
                            c[(d, d)] += reg;
                        }
                        c
                    }
                    (Scatter::Diag(_), false) => unreachable!(),
                })
                .collect(),
        ),
        CovarianceType::Tied => {
            let mut c = DMatrix::zeros(dim, dim);
            for (s, &re) in stats.iter().zip(&reseeded) {
                if let (Scatter::Full(sc), false) = (&s.scatter, re) {
                    c += sc;
                }
            }
            c /= n as f64;
            for d in 0..dim {
                c[(d, d)] += reg;
            }
            Covariances::Tied(c)
        }
        CovarianceType::Diag | CovarianceType::Spherical => {
            let diags: Vec<DVector<f64>> = stats
                .iter()
                .zip(&reseeded)
                .map(|(s, &re)| match (&s.scatter, re) {
                    (_, true) => fallback.diag.clone(),
                    (Scatter::Diag(sc), false) => sc.map(|v| v / s.mass + reg),
                    (Scatter::Full(_), false) => unreachable!(),
                })
                .collect();
            if kind == CovarianceType::Diag {
                Covariances::Diag(diags)
            } else {
                Covariances::Spherical(diags.iter().map(|d| d.mean()).collect())
            }
        }
    };

    Ok((GmmModel::new(weights, means, covariances)?, n_reseeded))
}

/// k-means++ seeding: the first mean is a uniform draw, each later one is
/// drawn with probability proportional to its squared distance from the
/// nearest mean chosen so far.
fn kmeans_plus_plus(x: &DMatrix<f64>, m: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let n = x.nrows();
    let mut chosen = Vec::with_capacity(m);
    chosen.push(rng.random_range(0..n));
    let mut closest: Vec<f64> = (0..n)
        .map(|i| (x.row(i) - x.row(chosen[0])).norm_squared())
        .collect();
    while chosen.len() < m {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just past the final sum.
            pick.unwrap_or_else(|| closest.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // Every sample coincides with a chosen mean.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min((x.row(i) - x.row(pick)).norm_squared());
        }
    }
    DMatrix::from_fn(m, x.ncols(), |k, d| x[(chosen[k], d)])
}
