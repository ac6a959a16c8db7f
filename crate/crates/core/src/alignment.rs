//! Orthogonal Procrustes alignment of one embedding onto another.
//!
//! Applied to a pair before compression and measurement: the second matrix is
//! right-multiplied by the orthogonal map minimizing the Frobenius distance
//! to the first. Reflections are allowed (the full orthogonal group).

use nalgebra::DMatrix;

use crate::embedding_store::EmbeddingMatrix;
use crate::error::{Error, Result};

const ORTHOGONALITY_TOL: f64 = 1e-8;

/// A d x d orthogonal matrix, validated to `ORTHOGONALITY_TOL` per entry.
#[derive(Debug, Clone)]
pub struct OrthogonalMap {
    matrix: DMatrix<f64>,
}

impl OrthogonalMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        let gram = matrix.transpose() * &matrix;
        let eye = DMatrix::<f64>::identity(matrix.nrows(), matrix.ncols());
        let dev = (gram - eye).abs().max();
        if dev > ORTHOGONALITY_TOL {
            return Err(Error::DegenerateMatrix(format!(
                "map is not orthogonal: max |O^T O - I| = {dev:e}"
            )));
        }
        Ok(OrthogonalMap { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Right-multiply an embedding by the map, keeping vocab and metadata.
    pub fn apply(&self, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if x.dim() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.nrows(),
                found: x.dim(),
            });
        }
        EmbeddingMatrix::new(
            x.vocab().to_vec(),
            x.weights() * &self.matrix,
            x.meta().clone(),
        )
    }
}

fn check_pair(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    if !x.same_vocab(y) {
        return Err(Error::VocabMismatch(
            "procrustes requires a harmonized pair".into(),
        ));
    }
    Ok(())
}

/// Solve `min_O ||X - Y O||_F` over orthogonal `O` via the SVD of the d x d
/// matrix `Y^T X`. Never forms an n x n Gram matrix.
pub fn procrustes(x: &EmbeddingMatrix, y: &EmbeddingMatrix) -> Result<OrthogonalMap> {
    check_pair(x, y)?;
    let m = y.weights().transpose() * x.weights();
    let svd = m
        .try_svd(true, true, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::DegenerateMatrix("singular value decomposition did not converge".into()))?;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    OrthogonalMap::new(u * v_t)
}

/// Align `y` onto `x`: returns `(x, y * O)` with `x` unchanged.
pub fn align_pair(
    x: EmbeddingMatrix,
    y: EmbeddingMatrix,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let map = procrustes(&x, &y)?;
    let aligned = map.apply(&y)?;
    Ok((x, aligned))
}
