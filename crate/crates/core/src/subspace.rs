//! Internal thin-SVD helper with relative singular-value truncation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative cutoff below which singular values are treated as zero.
pub(crate) const SVD_TRUNCATION: f64 = 1e-10;

/// Left singular vectors and singular values of a matrix, columns ordered by
/// decreasing singular value, truncated at `SVD_TRUNCATION * sigma_max`.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }
}

const MAX_SVD_ITERATIONS: usize = 100_000;

pub(crate) fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let svd = m
        .clone()
        .try_svd(true, false, f64::EPSILON, MAX_SVD_ITERATIONS)
        .ok_or_else(|| Error::DegenerateMatrix("singular value decomposition did not converge".into()))?;
    let u = svd.u.expect("u requested");
    let sigma = svd.singular_values;

    let sigma_max = sigma.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max <= 0.0 {
        return Err(Error::DegenerateMatrix("all singular values are zero".into()));
    }
    let cutoff = SVD_TRUNCATION * sigma_max;

    // Order columns by decreasing singular value and drop the tail.
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).expect("finite singular values"));
    let kept: Vec<usize> = order.into_iter().filter(|&i| sigma[i] > cutoff).collect();

    let u = u.select_columns(kept.iter());
    let sigma = DVector::from_iterator(kept.len(), kept.iter().map(|&i| sigma[i]));
    Ok(ThinSvd { u, sigma })
}
