//! Quantifies how unstable downstream models are to a change of word
//! embeddings, and selects embedding dimension-precision parameters under
//! memory budgets.
//!
//! The pipeline mirrors an embedding-churn study: train matrix-completion
//! embeddings on two corpus variants, align them with orthogonal Procrustes,
//! compress with uniform quantization, score pairs with five embedding
//! distance measures (centered on the eigenspace instability measure and its
//! linear-regression disagreement identity), train linear bag-of-words
//! classifiers, and analyze how measures and memory track the observed
//! prediction disagreement.
//!
//! The central identity: the eigenspace instability measure of a pair, with
//! the label covariance built from anchor embeddings, equals the expected
//! normalized disagreement of least-squares models trained on a shared
//! random label vector.
//!
//! ```
//! use embstab_core::measures::{eigenspace_instability, CovarianceSpec};
//! use embstab_core::oracle::{analytic_disagreement, LabelCovariance};
//! use embstab_core::{EmbeddingMatrix, EmbeddingMeta};
//! use nalgebra::DMatrix;
//!
//! let emb = |tag: &str, m: DMatrix<f64>| {
//!     let vocab = (0..m.nrows()).map(|i| format!("w{i}")).collect();
//!     let d = m.ncols();
//!     EmbeddingMatrix::new(vocab, m, EmbeddingMeta::new(tag, "doc", 0, d, 32)).unwrap()
//! };
//! let x = emb("x", DMatrix::from_fn(12, 3, |i, j| ((i * 3 + j) as f64).sin()));
//! let y = emb("y", DMatrix::from_fn(12, 2, |i, j| ((i * 2 + j) as f64).cos()));
//! let e = emb("e", DMatrix::from_fn(12, 4, |i, j| ((i + 7 * j) as f64).sin()));
//! let spec = CovarianceSpec::new(&e, &e, 3.0).unwrap();
//!
//! let fast = eigenspace_instability(&x, &y, &spec).unwrap();
//! let sigma = LabelCovariance::from_spec(&spec).unwrap();
//! let dense = analytic_disagreement(&x, &y, &sigma).unwrap();
//! assert!((fast - dense).abs() <= 1e-10);
//! assert!((0.0..=1.0).contains(&fast));
//! ```

pub mod alignment;
pub mod analysis;
pub mod downstream;
pub mod embedding_store;
pub mod error;
pub mod mc_embedder;
pub mod measures;
pub mod oracle;
pub mod quantizer;
pub mod records;
pub mod selection;
mod subspace;
#[cfg(test)]
mod testutil;

pub use embedding_store::{EmbeddingMatrix, EmbeddingMeta};
pub use error::{Error, ErrorKind, Result};
