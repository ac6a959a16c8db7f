//! Loading, saving, and vocabulary harmonization of embedding matrices.
//!
//! The on-disk format is the word2vec text convention: a header line `n d`,
//! then one `token v1 ... vd` line per word. Row order is frequency order by
//! convention, and tokens are compared case-sensitively.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Bit widths accepted for the `precision_bits` metadata field.
pub const VALID_PRECISIONS: [u8; 6] = [1, 2, 4, 8, 16, 32];

/// Provenance metadata carried with an embedding matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingMeta {
    pub algorithm: String,
    pub corpus: String,
    pub seed: u64,
    pub dimension: usize,
    pub precision_bits: u8,
}

impl EmbeddingMeta {
    pub fn new(algorithm: &str, corpus: &str, seed: u64, dimension: usize, bits: u8) -> Self {
        EmbeddingMeta {
            algorithm: algorithm.to_string(),
            corpus: corpus.to_string(),
            seed,
            dimension,
            precision_bits: bits,
        }
    }
}

/// A vocabulary-indexed n x d real matrix. Immutable after construction, so
/// it can be shared freely across threads.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    weights: DMatrix<f64>,
    meta: EmbeddingMeta,
}

impl EmbeddingMatrix {
    /// Validates all type invariants: unique whitespace-free tokens, finite
    /// entries, row count equal to vocab size, metadata consistent with the
    /// matrix shape.
    pub fn new(vocab: Vec<String>, weights: DMatrix<f64>, meta: EmbeddingMeta) -> Result<Self> {
        if vocab.len() != weights.nrows() {
            return Err(Error::InvalidEmbedding(format!(
                "vocab has {} tokens but matrix has {} rows",
                vocab.len(),
                weights.nrows()
            )));
        }
        if meta.dimension != weights.ncols() {
            return Err(Error::InvalidEmbedding(format!(
                "meta dimension {} does not match {} columns",
                meta.dimension,
                weights.ncols()
            )));
        }
        if !VALID_PRECISIONS.contains(&meta.precision_bits) {
            return Err(Error::InvalidEmbedding(format!(
                "precision {} not in {:?}",
                meta.precision_bits, VALID_PRECISIONS
            )));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, token) in vocab.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::InvalidEmbedding(format!(
                    "token {token:?} is empty or contains whitespace"
                )));
            }
            if index.insert(token.clone(), i).is_some() {
                return Err(Error::InvalidEmbedding(format!("duplicate token {token:?}")));
            }
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding("non-finite value in matrix".into()));
        }
        Ok(EmbeddingMatrix {
            vocab,
            index,
            weights,
            meta,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn meta(&self) -> &EmbeddingMeta {
        &self.meta
    }

    /// Number of words (rows).
    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    /// Embedding dimension (columns).
    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Returns a copy with the metadata replaced; the matrix is unchanged.
    pub fn with_meta(&self, meta: EmbeddingMeta) -> Result<Self> {
        EmbeddingMatrix::new(self.vocab.clone(), self.weights.clone(), meta)
    }

    /// Restrict to the rows given by `rows` (in that order), keeping metadata.
    pub(crate) fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let vocab: Vec<String> = rows.iter().map(|&r| self.vocab[r].clone()).collect();
        let weights = self.weights.select_rows(rows.iter());
        EmbeddingMatrix::new(vocab, weights, self.meta.clone())
    }

    /// True when both sides hold the same vocabulary as identical lists.
    pub fn same_vocab(&self, other: &EmbeddingMatrix) -> bool {
        self.vocab == other.vocab
    }
}

fn parse_count(path: &Path, line: usize, field: &str, what: &str) -> Result<usize> {
    field.parse::<usize>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("malformed header: {what} {field:?} is not a count"),
    })
}

/// Load an embedding from the text format. Errors carry the offending line
/// number. The loaded metadata is a placeholder (`algorithm = "unknown"`,
/// full precision); callers that know the provenance should attach it with
/// [`EmbeddingMatrix::with_meta`].
pub fn load_embedding(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("malformed header {header:?}: expected \"n d\""),
        });
    }
    let n = parse_count(path, 1, fields[0], "row count")?;
    let d = parse_count(path, 1, fields[1], "dimension")?;

    let mut vocab = Vec::with_capacity(n);
    let mut seen = HashSet::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line has a first field");
        let values: Vec<&str> = parts.collect();
        if values.len() != d {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!(
                    "row for {token:?} has {} values, expected {d}",
                    values.len()
                ),
            });
        }
        if !seen.insert(token.to_string()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("duplicate token {token:?}"),
            });
        }
        for v in values {
            let x: f64 = v.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("value {v:?} is not a number"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("non-finite value {v:?}"),
                });
            }
            data.push(x);
        }
        vocab.push(token.to_string());
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: rows + 1,
            message: format!("header promised {n} rows, file has {rows}"),
        });
    }
    let weights = DMatrix::from_row_slice(n, d, &data);
    let corpus = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EmbeddingMatrix::new(
        vocab,
        weights,
        EmbeddingMeta::new("unknown", &corpus, 0, d, 32),
    )
}

/// Save an embedding in the text format. Values are written with the shortest
/// decimal representation that round-trips exactly, so `load(save(x))`
/// reproduces the matrix bit for bit.
pub fn save_embedding(x: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", x.len(), x.dim());
    for (i, token) in x.vocab.iter().enumerate() {
        out.push_str(token);
        for j in 0..x.dim() {
            let _ = write!(out, " {}", x.weights[(i, j)]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Restrict both matrices to the intersection of their top-`top_k`
/// vocabularies, ordered by the first matrix's (frequency) order. The outputs
/// share an identical vocabulary list.
pub fn harmonize(
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    top_k: usize,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be at least 1".into()));
    }
    let kx = top_k.min(x.len());
    let ky = top_k.min(y.len());
    let y_top: HashSet<&str> = y.vocab[..ky].iter().map(String::as_str).collect();

    let mut x_rows = Vec::new();
    let mut y_rows = Vec::new();
    for (i, token) in x.vocab[..kx].iter().enumerate() {
        if y_top.contains(token.as_str()) {
            x_rows.push(i);
            y_rows.push(y.token_index(token).expect("token is in y's top-k"));
        }
    }
    if x_rows.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok((x.select_rows(&x_rows)?, y.select_rows(&y_rows)?))
}
