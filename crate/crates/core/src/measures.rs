//! Embedding distance measures: the eigenspace instability measure plus the
//! four baselines (k-NN overlap, semantic displacement, PIP loss, eigenspace
//! overlap score).
//!
//! The eigenspace instability measure between X and X~ with respect to a
//! positive semidefinite weighting Sigma is
//!
//! ```text
//!   EI(X, X~) = tr((U U^T + U~ U~^T - 2 U~ U~^T U U^T) Sigma) / tr(Sigma)
//! ```
//!
//! where U, U~ are the left singular vectors. With Sigma given implicitly by
//! anchor embeddings as (E E^T)^a + (E~ E~^T)^a, both traces reduce to small
//! Frobenius/trace terms over d x d products, so the whole computation runs
//! in O(n d^2) time and O(d^2) memory without ever materializing an n x n
//! matrix.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::procrustes;
use crate::embedding_store::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::subspace::thin_svd;

/// Implicit representation of Sigma = (E E^T)^alpha + (E~ E~^T)^alpha via the
/// two anchor embeddings and the exponent. Matrix powers are rank-truncated:
/// singular values below the relative cutoff are dropped, not raised to the
/// zeroth power.
#[derive(Debug, Clone, Copy)]
pub struct CovarianceSpec<'a> {
    pub anchor_a: &'a EmbeddingMatrix,
    pub anchor_b: &'a EmbeddingMatrix,
    pub alpha: f64,
}

impl<'a> CovarianceSpec<'a> {
    pub fn new(
        anchor_a: &'a EmbeddingMatrix,
        anchor_b: &'a EmbeddingMatrix,
        alpha: f64,
    ) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "alpha must be a finite nonnegative exponent, got {alpha}"
            )));
        }
        if !anchor_a.same_vocab(anchor_b) {
            return Err(Error::VocabMismatch("anchors must share a vocabulary".into()));
        }
        Ok(CovarianceSpec {
            anchor_a,
            anchor_b,
            alpha,
        })
    }

    /// Vocabulary size covered by the anchors.
    pub fn len(&self) -> usize {
        self.anchor_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_a.is_empty()
    }

    /// Materialize Sigma as a dense n x n matrix. Intended for small n; the
    /// measure itself never calls this.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        let mut sigma = DMatrix::<f64>::zeros(self.len(), self.len());
        for anchor in [self.anchor_a, self.anchor_b] {
            let svd = thin_svd(anchor.weights())?;
            let scaled = scale_columns(&svd.u, &svd.sigma, 2.0 * self.alpha);
            sigma += scaled * svd.u.transpose();
        }
        Ok(sigma)
    }
}

/// Multiply column j of `u` by `sigma[j]^power`.
fn scale_columns(u: &DMatrix<f64>, sigma: &DVector<f64>, power: f64) -> DMatrix<f64> {
    let mut out = u.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= sigma[j].powf(power);
    }
    out
}

fn check_harmonized(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<()> {
    if !x.same_vocab(y) {
        return Err(Error::VocabMismatch(
            "measures require a harmonized pair (identical vocab lists)".into(),
        ));
    }
    Ok(())
}

/// Eigenspace instability measure in [0, 1] via the efficient trace form.
pub fn eigenspace_instability(
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    spec: &CovarianceSpec,
) -> Result<f64> {
    check_harmonized(x, y)?;
    if spec.len() != x.len() {
        return Err(Error::VocabMismatch(
            "anchors must share the harmonized vocab of the measured pair".into(),
        ));
    }
    let ux = thin_svd(x.weights())?;
    let uy = thin_svd(y.weights())?;
    let cross = uy.u.transpose() * &ux.u; // U~^T U, r~ x r

    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for anchor in [spec.anchor_a, spec.anchor_b] {
        let asvd = thin_svd(anchor.weights())?;
        denominator += asvd.sigma.iter().map(|s| s.powf(2.0 * spec.alpha)).sum::<f64>();

        // V R^a once; every remaining product is at most d x d.
        let vr = scale_columns(&asvd.u, &asvd.sigma, spec.alpha);
        let q = ux.u.transpose() * &vr; // U^T V R^a
        let p = uy.u.transpose() * &vr; // U~^T V R^a
        let cross_term = (&cross * &q).dot(&p); // tr(P^T (U~^T U) Q)
        numerator += q.norm_squared() + p.norm_squared() - 2.0 * cross_term;
    }
    if denominator <= 0.0 {
        return Err(Error::ZeroTrace);
    }
    Ok((numerator / denominator).clamp(0.0, 1.0))
}

/// Mean overlap of k-nearest-neighbor sets (cosine similarity) over `queries`
/// query words sampled without replacement with the given seed. The query
/// word is excluded from its own neighbor list; ties prefer the lower vocab
/// index.
pub fn knn_measure(
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    k: usize,
    queries: usize,
    seed: u64,
) -> Result<f64> {
    check_harmonized(x, y)?;
    let n = x.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidConfig(format!(
            "neighbor count k = {k} must satisfy 0 < k < vocab size {n}"
        )));
    }
    if queries == 0 || queries > n {
        return Err(Error::InvalidConfig(format!(
            "query count {queries} must satisfy 0 < Q <= vocab size {n}"
        )));
    }
    let nx = normalized_rows(x)?;
    let ny = normalized_rows(y)?;

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sampled, _) = indices.partial_shuffle(&mut rng, queries);

    let mut total = 0.0;
    for &q in sampled.iter() {
        let a = top_k_neighbors(&nx, q, k);
        let b = top_k_neighbors(&ny, q, k);
        let overlap = a.iter().filter(|i| b.contains(i)).count();
        total += overlap as f64 / k as f64;
    }
    Ok(total / queries as f64)
}

fn normalized_rows(x: &EmbeddingMatrix) -> Result<DMatrix<f64>> {
    let mut m = x.weights().clone();
    for (i, mut row) in m.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 {
            return Err(Error::ZeroNormVector {
                token: x.vocab()[i].clone(),
            });
        }
        row /= norm;
    }
    Ok(m)
}

fn top_k_neighbors(normalized: &DMatrix<f64>, query: usize, k: usize) -> Vec<usize> {
    let sims = normalized * normalized.row(query).transpose();
    let mut scored: Vec<(usize, f64)> = sims
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query)
        .map(|(i, &s)| (i, s))
        .collect();
    // Total order: similarity descending, then vocab index ascending.
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.partial_cmp(&a.1)
            .expect("similarities are finite")
            .then_with(|| a.0.cmp(&b.0))
    };
    scored.select_nth_unstable_by(k - 1, cmp);
    scored.truncate(k);
    scored.into_iter().map(|(i, _)| i).collect()
}

/// Mean cosine distance between corresponding rows after orthogonal
/// Procrustes alignment of `y` onto `x`. Range [0, 2].
pub fn semantic_displacement(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<f64> {
    check_harmonized(x, y)?;
    let map = procrustes(x, y)?;
    let aligned = y.weights() * map.matrix();
    let mut total = 0.0;
    for i in 0..x.len() {
        let a = x.weights().row(i);
        let b = aligned.row(i);
        let denom = a.norm() * b.norm();
        if denom == 0.0 {
            return Err(Error::ZeroNormVector {
                token: x.vocab()[i].clone(),
            });
        }
        total += 1.0 - a.dot(&b) / denom;
    }
    // Round-off can push a cosine a hair past 1; keep the mean in [0, 2].
    Ok((total / x.len() as f64).clamp(0.0, 2.0))
}

/// PIP loss ||X X^T - X~ X~^T||_F computed from d x d Gram blocks, never the
/// n x n form. Dimensions of the two sides may differ.
pub fn pip_loss(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<f64> {
    check_harmonized(x, y)?;
    let gx = x.weights().transpose() * x.weights();
    let gy = y.weights().transpose() * y.weights();
    let cross = x.weights().transpose() * y.weights();
    let value = gx.norm_squared() + gy.norm_squared() - 2.0 * cross.norm_squared();
    Ok(value.max(0.0).sqrt())
}

/// Eigenspace overlap score ||U^T U~||_F^2 / max(rank X, rank X~) in [0, 1].
pub fn eigenspace_overlap(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<f64> {
    check_harmonized(x, y)?;
    let ux = thin_svd(x.weights())?;
    let uy = thin_svd(y.weights())?;
    let cross = ux.u.transpose() * &uy.u;
    let denom = ux.rank().max(uy.rank()) as f64;
    Ok((cross.norm_squared() / denom).clamp(0.0, 1.0))
}

/// The five measure names as they appear in `measures.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureName {
    #[serde(rename = "eis")]
    Eis,
    #[serde(rename = "knn")]
    Knn,
    #[serde(rename = "sem_disp")]
    SemDisp,
    #[serde(rename = "pip")]
    Pip,
    #[serde(rename = "eig_overlap")]
    EigOverlap,
}

impl MeasureName {
    pub const ALL: [MeasureName; 5] = [
        MeasureName::Eis,
        MeasureName::Knn,
        MeasureName::SemDisp,
        MeasureName::Pip,
        MeasureName::EigOverlap,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MeasureName::Eis => "eis",
            MeasureName::Knn => "knn",
            MeasureName::SemDisp => "sem_disp",
            MeasureName::Pip => "pip",
            MeasureName::EigOverlap => "eig_overlap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        MeasureName::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidRecord(format!("unknown measure name {s:?}")))
    }
}

impl fmt::Display for MeasureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the measures table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub pair_id: String,
    pub measure_name: MeasureName,
    pub value: f64,
}

impl MeasureRecord {
    pub fn new(pair_id: &str, measure_name: MeasureName, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidRecord(format!(
                "{measure_name} value {value} is not finite"
            )));
        }
        let in_range = match measure_name {
            MeasureName::Eis | MeasureName::Knn | MeasureName::EigOverlap => {
                (0.0..=1.0).contains(&value)
            }
            MeasureName::SemDisp => (0.0..=2.0).contains(&value),
            MeasureName::Pip => value >= 0.0,
        };
        if !in_range {
            return Err(Error::InvalidRecord(format!(
                "{measure_name} value {value} is out of range"
            )));
        }
        Ok(MeasureRecord {
            pair_id: pair_id.to_string(),
            measure_name,
            value,
        })
    }
}

/// Seeded configuration for the k-NN measure.
#[derive(Debug, Clone, Copy)]
pub struct KnnConfig {
    pub k: usize,
    pub queries: usize,
    pub seed: u64,
}

/// Run all five measures on a harmonized pair; the record order is fixed as
/// (eis, knn, sem_disp, pip, eig_overlap).
pub fn measure_all(
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    spec: &CovarianceSpec,
    knn: &KnnConfig,
    pair_id: &str,
) -> Result<Vec<MeasureRecord>> {
    Ok(vec![
        MeasureRecord::new(pair_id, MeasureName::Eis, eigenspace_instability(x, y, spec)?)?,
        MeasureRecord::new(
            pair_id,
            MeasureName::Knn,
            knn_measure(x, y, knn.k, knn.queries, knn.seed)?,
        )?,
        MeasureRecord::new(pair_id, MeasureName::SemDisp, semantic_displacement(x, y)?)?,
        MeasureRecord::new(pair_id, MeasureName::Pip, pip_loss(x, y)?)?,
        MeasureRecord::new(pair_id, MeasureName::EigOverlap, eigenspace_overlap(x, y)?)?,
    ])
}
