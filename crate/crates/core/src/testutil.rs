//! Seeded random fixtures for the unit tests in this crate.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding_store::{EmbeddingMatrix, EmbeddingMeta};

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
}

pub(crate) fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    random_matrix(rng, d, d).qr().q()
}

pub(crate) fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    (&a * a.transpose()) / n as f64
}

/// Wrap a matrix as an embedding with vocabulary w0, w1, ...
pub(crate) fn embedding(tag: &str, weights: DMatrix<f64>) -> EmbeddingMatrix {
    let vocab: Vec<String> = (0..weights.nrows()).map(|i| format!("w{i}")).collect();
    let d = weights.ncols();
    EmbeddingMatrix::new(vocab, weights, EmbeddingMeta::new(tag, "test", 0, d, 32))
        .expect("test fixture is valid")
}
