//! Error type shared across the library.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error category, used by callers to decide exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or inconsistent input data (files, vocabularies, tables).
    Data,
    /// A numerical procedure failed (divergence, rank deficiency, degeneracy).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("vocabulary intersection is empty")]
    EmptyIntersection,

    #[error("matrix is degenerate: {0}")]
    DegenerateMatrix(String),

    #[error("word vector for {token:?} has zero norm; cosine distance undefined")]
    ZeroNormVector { token: String },

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("covariance has zero trace")]
    ZeroTrace,

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("missing records: {0}")]
    MissingRecords(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("no memory budget has two or more candidate configurations")]
    NoMultiCandidateBudgets,

    #[error("degenerate input for correlation: {0}")]
    DegenerateCorrelation(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::InvalidEmbedding(_)
            | Error::InvalidConfig(_)
            | Error::DimensionMismatch { .. }
            | Error::VocabMismatch(_)
            | Error::EmptyIntersection
            | Error::MissingRecords(_)
            | Error::InvalidRecord(_) => ErrorKind::Data,
            Error::DegenerateMatrix(_)
            | Error::ZeroNormVector { .. }
            | Error::RankDeficient(_)
            | Error::ZeroTrace
            | Error::Divergence { .. }
            | Error::NoMultiCandidateBudgets
            | Error::DegenerateCorrelation(_) => ErrorKind::Numerical,
        }
    }
}
