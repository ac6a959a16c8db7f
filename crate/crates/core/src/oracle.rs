//! Independent verification that the eigenspace instability measure equals
//! the expected normalized disagreement of linear regression models sharing a
//! random label vector.
//!
//! The dense routines here deliberately materialize n x n matrices: they are
//! the slow, obviously-correct counterpart to the efficient trace computation
//! in [`crate::measures`], and are only meant for modest n.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding_store::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::measures::CovarianceSpec;
use crate::subspace::{thin_svd, SVD_TRUNCATION};

const SYMMETRY_TOL: f64 = 1e-10;
const EIGEN_CLIP: f64 = 1e-10;

/// Zero-mean label distribution, carried as a materialized n x n covariance.
/// Validated to be symmetric; positive semidefiniteness (eigenvalues above
/// -1e-10 relative) is enforced when a factor is taken.
#[derive(Debug, Clone)]
pub struct LabelCovariance {
    matrix: DMatrix<f64>,
}

impl LabelCovariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateMatrix("covariance has non-finite entries".into()));
        }
        let scale = matrix.abs().max().max(1.0);
        let dev = (&matrix - matrix.transpose()).abs().max();
        if dev > SYMMETRY_TOL * scale {
            return Err(Error::DegenerateMatrix(format!(
                "covariance is not symmetric: max deviation {dev:e}"
            )));
        }
        Ok(LabelCovariance { matrix })
    }

    /// Materialize Sigma from anchor embeddings and alpha.
    pub fn from_spec(spec: &CovarianceSpec) -> Result<Self> {
        LabelCovariance::new(spec.materialize()?)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// Factor Sigma = L L^T via the symmetric eigendecomposition, clipping
    /// slightly negative eigenvalues at zero.
    fn factor(&self) -> Result<DMatrix<f64>> {
        let eig = self.matrix.clone().symmetric_eigen();
        let scale = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max).max(1.0);
        let mut l = eig.eigenvectors;
        for (j, mut col) in l.column_iter_mut().enumerate() {
            let lambda = eig.eigenvalues[j];
            if lambda < -EIGEN_CLIP * scale {
                return Err(Error::DegenerateMatrix(format!(
                    "covariance has negative eigenvalue {lambda:e}"
                )));
            }
            col *= lambda.max(0.0).sqrt();
        }
        Ok(l)
    }
}

/// Least-squares predictions of a linear model on its own training points:
/// the projection U U^T y of the label vector onto the column span of X.
pub fn fit_predictions(x: &EmbeddingMatrix, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let svd = thin_svd(x.weights())?;
    if svd.rank() < x.dim().min(x.len()) {
        return Err(Error::RankDeficient(format!(
            "matrix has rank {} below its {} columns (relative cutoff {SVD_TRUNCATION:e})",
            svd.rank(),
            x.dim()
        )));
    }
    Ok(&svd.u * (svd.u.transpose() * y))
}

/// Normalized expected disagreement tr((P + P~ - 2 P~ P) Sigma) / tr(Sigma)
/// by direct dense computation with explicit projections.
pub fn analytic_disagreement(
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    sigma: &LabelCovariance,
) -> Result<f64> {
    if !x.same_vocab(y) {
        return Err(Error::VocabMismatch("pair must be harmonized".into()));
    }
    if sigma.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: sigma.len(),
        });
    }
    let trace_sigma = sigma.matrix.trace();
    if trace_sigma <= 0.0 {
        return Err(Error::ZeroTrace);
    }
    let proj = |m: &EmbeddingMatrix| -> Result<DMatrix<f64>> {
        let u = thin_svd(m.weights())?.u;
        Ok(&u * u.transpose())
    };
    let p = proj(x)?;
    let pt = proj(y)?;
    let inner = &p + &pt - 2.0 * &pt * &p;
    let value = (inner * &sigma.matrix).trace() / trace_sigma;
    Ok(value.clamp(0.0, 1.0))
}

/// Monte Carlo estimate of the disagreement ratio with a jackknife standard
/// error of the ratio estimator.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Draw label vectors y = L g with g standard normal (seeded), and estimate
/// E ||U U^T y - U~ U~^T y||^2 / E ||y||^2 as a ratio of sample means.
pub fn monte_carlo_disagreement(
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    sigma: &LabelCovariance,
    samples: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if samples == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    if !x.same_vocab(y) {
        return Err(Error::VocabMismatch("pair must be harmonized".into()));
    }
    let n = x.len();
    if sigma.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: sigma.len(),
        });
    }
    let l = sigma.factor()?;
    let ux = thin_svd(x.weights())?.u;
    let uy = thin_svd(y.weights())?.u;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut nums = Vec::with_capacity(samples);
    let mut dens = Vec::with_capacity(samples);
    let mut g = DVector::<f64>::zeros(n);
    for _ in 0..samples {
        for v in g.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        let label = &l * &g;
        let px = &ux * (ux.transpose() * &label);
        let py = &uy * (uy.transpose() * &label);
        nums.push((px - py).norm_squared());
        dens.push(label.norm_squared());
    }

    let num_total: f64 = nums.iter().sum();
    let den_total: f64 = dens.iter().sum();
    if den_total <= 0.0 {
        return Err(Error::ZeroTrace);
    }
    let estimate = num_total / den_total;

    // Jackknife over samples: numerator and denominator share draws.
    let s = samples as f64;
    let mut loo = Vec::with_capacity(samples);
    for i in 0..samples {
        let d = den_total - dens[i];
        loo.push(if d > 0.0 {
            (num_total - nums[i]) / d
        } else {
            estimate
        });
    }
    let mean = loo.iter().sum::<f64>() / s;
    let var = loo.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() * (s - 1.0) / s;
    Ok(MonteCarloEstimate {
        estimate,
        std_error: var.max(0.0).sqrt(),
        samples,
    })
}
