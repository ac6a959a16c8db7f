//! Desk-scale matrix-completion word embedding trainer: windowed
//! co-occurrence counts, PPMI transform, and seeded SGD factorization of the
//! observed (non-zero) entries.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding_store::{EmbeddingMatrix, EmbeddingMeta};
use crate::error::{Error, Result};

/// Sparse symmetric co-occurrence matrix holding raw counts or PPMI values.
#[derive(Debug, Clone)]
pub struct CooccurrenceMatrix {
    vocab: Vec<String>,
    entries: HashMap<(u32, u32), f64>,
    window: usize,
    min_count: u64,
}

impl CooccurrenceMatrix {
    /// Build from explicit entries, validating symmetry and positivity.
    pub fn from_entries(
        vocab: Vec<String>,
        entries: HashMap<(u32, u32), f64>,
        window: usize,
        min_count: u64,
    ) -> Result<Self> {
        let n = vocab.len() as u32;
        for (&(i, j), &v) in &entries {
            if i >= n || j >= n {
                return Err(Error::InvalidRecord(format!(
                    "entry ({i}, {j}) outside vocabulary of size {n}"
                )));
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidRecord(format!(
                    "entry ({i}, {j}) has non-positive value {v}"
                )));
            }
            let mirrored = entries.get(&(j, i)).copied();
            if mirrored != Some(v) {
                return Err(Error::InvalidRecord(format!(
                    "entry ({i}, {j}) = {v} has no symmetric counterpart"
                )));
            }
        }
        Ok(CooccurrenceMatrix {
            vocab,
            entries,
            window,
            min_count,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn entry(&self, i: u32, j: u32) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    /// Entries in deterministic (row, column) order.
    pub fn sorted_entries(&self) -> Vec<(u32, u32, f64)> {
        let mut v: Vec<(u32, u32, f64)> =
            self.entries.iter().map(|(&(i, j), &x)| (i, j, x)).collect();
        v.sort_unstable_by_key(|&(i, j, _)| (i, j));
        v
    }
}

/// Count co-occurrences within `window` positions on each side. Documents are
/// the items of `docs`, tokenized on whitespace; the window never crosses a
/// document boundary. Tokens rarer than `min_count` are dropped before
/// counting, and the vocabulary is ordered by descending frequency (ties by
/// first appearance).
pub fn count_cooccurrence<S: AsRef<str>>(
    docs: &[S],
    window: usize,
    min_count: u64,
) -> Result<CooccurrenceMatrix> {
    if window == 0 {
        return Err(Error::InvalidConfig("window must be at least 1".into()));
    }
    let mut freq: HashMap<&str, (u64, usize)> = HashMap::new();
    let mut order = 0usize;
    for doc in docs {
        for token in doc.as_ref().split_whitespace() {
            let e = freq.entry(token).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            e.0 += 1;
        }
    }
    let mut surviving: Vec<(&str, u64, usize)> = freq
        .iter()
        .filter(|(_, &(c, _))| c >= min_count)
        .map(|(&t, &(c, first))| (t, c, first))
        .collect();
    if surviving.is_empty() {
        return Err(Error::InvalidConfig(
            "vocabulary is empty after the min-count filter".into(),
        ));
    }
    surviving.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let vocab: Vec<String> = surviving.iter().map(|(t, _, _)| t.to_string()).collect();
    let ids: HashMap<&str, u32> = surviving
        .iter()
        .enumerate()
        .map(|(i, (t, _, _))| (*t, i as u32))
        .collect();

    let mut entries: HashMap<(u32, u32), f64> = HashMap::new();
    let mut doc_ids: Vec<u32> = Vec::new();
    for doc in docs {
        doc_ids.clear();
        doc_ids.extend(
            doc.as_ref()
                .split_whitespace()
                .filter_map(|t| ids.get(t).copied()),
        );
        for (pos, &center) in doc_ids.iter().enumerate() {
            let end = (pos + window + 1).min(doc_ids.len());
            for &right in &doc_ids[pos + 1..end] {
                *entries.entry((center, right)).or_insert(0.0) += 1.0;
                *entries.entry((right, center)).or_insert(0.0) += 1.0;
            }
        }
    }
    CooccurrenceMatrix::from_entries(vocab, entries, window, min_count)
}

/// Positive pointwise mutual information transform (natural log). Entries
/// whose PMI is non-positive are removed from the sparse set.
pub fn ppmi(a: &CooccurrenceMatrix) -> Result<CooccurrenceMatrix> {
    let mut rowsum = vec![0.0f64; a.len()];
    let mut total = 0.0f64;
    for (&(i, _), &v) in &a.entries {
        rowsum[i as usize] += v;
        total += v;
    }
    if total <= 0.0 {
        return Err(Error::InvalidConfig("co-occurrence total is zero".into()));
    }
    let mut out = HashMap::new();
    for (&(i, j), &v) in &a.entries {
        let pmi = (v * total / (rowsum[i as usize] * rowsum[j as usize])).ln();
        if pmi > 0.0 {
            out.insert((i, j), pmi);
        }
    }
    CooccurrenceMatrix::from_entries(a.vocab.clone(), out, a.window, a.min_count)
}

/// Hyperparameters for the SGD factorization.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub lr_decay_epochs: usize,
    pub tol: f64,
    pub corpus_tag: String,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            dim: 100,
            epochs: 50,
            lr: 0.2,
            batch: 128,
            seed: 0,
            lr_decay_epochs: 20,
            tol: 1e-4,
            corpus_tag: String::new(),
        }
    }
}

/// Trained embedding plus the per-epoch full-objective trace.
#[derive(Debug, Clone)]
pub struct McTrainResult {
    pub embedding: EmbeddingMatrix,
    pub epoch_losses: Vec<f64>,
}

/// Sum of squared residuals over the observed entries. This evaluator walks
/// the entries in sorted order; the trainer reports losses computed the same
/// way so the two agree exactly.
pub fn mc_objective(weights: &DMatrix<f64>, a: &CooccurrenceMatrix) -> f64 {
    let d = weights.ncols();
    let flat = weights.transpose(); // column-major transpose gives row-major access
    let data = flat.as_slice();
    let mut loss = 0.0;
    for (i, j, v) in a.sorted_entries() {
        let ri = &data[i as usize * d..(i as usize + 1) * d];
        let rj = &data[j as usize * d..(j as usize + 1) * d];
        let dot: f64 = ri.iter().zip(rj).map(|(x, y)| x * y).sum();
        let r = dot - v;
        loss += r * r;
    }
    loss
}

fn full_loss(rows: &[f64], d: usize, entries: &[(u32, u32, f64)]) -> f64 {
    let mut loss = 0.0;
    for &(i, j, v) in entries {
        let ri = &rows[i as usize * d..(i as usize + 1) * d];
        let rj = &rows[j as usize * d..(j as usize + 1) * d];
        let dot: f64 = ri.iter().zip(rj).map(|(x, y)| x * y).sum();
        let r = dot - v;
        loss += r * r;
    }
    loss
}

/// Factor the observed entries by minibatch SGD on the squared residuals.
/// Minibatch gradients are averaged and applied synchronously; the learning
/// rate halves every `lr_decay_epochs`; training stops early when the
/// relative epoch-loss improvement falls below `tol`. Fully determined by
/// the seed.
pub fn train_mc(a: &CooccurrenceMatrix, config: &McConfig) -> Result<McTrainResult> {
    if config.dim == 0 {
        return Err(Error::InvalidConfig("dimension must be at least 1".into()));
    }
    if config.batch == 0 || config.lr_decay_epochs == 0 {
        return Err(Error::InvalidConfig(
            "batch size and lr_decay_epochs must be at least 1".into(),
        ));
    }
    if a.num_entries() == 0 {
        return Err(Error::InvalidConfig("no observed entries to factor".into()));
    }
    let n = a.len();
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half_width = 0.5 / d as f64;
    let mut rows: Vec<f64> = (0..n * d)
        .map(|_| rng.random_range(-half_width..half_width))
        .collect();

    let sorted = a.sorted_entries();
    let mut perm = sorted.clone();
    let mut losses = Vec::new();
    let mut prev_loss = f64::INFINITY;
    let mut delta: HashMap<u32, Vec<f64>> = HashMap::new();

    for epoch in 0..config.epochs {
        let lr = config.lr * 0.5f64.powi((epoch / config.lr_decay_epochs) as i32);
        perm.shuffle(&mut rng);
        for batch in perm.chunks(config.batch) {
            delta.clear();
            for &(i, j, v) in batch {
                let ri = i as usize * d;
                let rj = j as usize * d;
                let dot: f64 = rows[ri..ri + d]
                    .iter()
                    .zip(&rows[rj..rj + d])
                    .map(|(x, y)| x * y)
                    .sum();
                let g = 2.0 * (dot - v);
                {
                    let di = delta.entry(i).or_insert_with(|| vec![0.0; d]);
                    for (acc, &w) in di.iter_mut().zip(&rows[rj..rj + d]) {
                        *acc += g * w;
                    }
                }
                let dj = delta.entry(j).or_insert_with(|| vec![0.0; d]);
                for (acc, &w) in dj.iter_mut().zip(&rows[ri..ri + d]) {
                    *acc += g * w;
                }
            }
            let scale = lr / batch.len() as f64;
            let mut touched: Vec<u32> = delta.keys().copied().collect();
            touched.sort_unstable();
            for row in touched {
                let grad = &delta[&row];
                let base = row as usize * d;
                for (w, &g) in rows[base..base + d].iter_mut().zip(grad) {
                    *w -= scale * g;
                }
            }
        }
        let loss = full_loss(&rows, d, &sorted);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        losses.push(loss);
        if prev_loss.is_finite() && (prev_loss - loss) / prev_loss < config.tol {
            break;
        }
        prev_loss = loss;
    }

    let weights = DMatrix::from_row_slice(n, d, &rows);
    let meta = EmbeddingMeta::new("mc", &config.corpus_tag, config.seed, d, 32);
    Ok(McTrainResult {
        embedding: EmbeddingMatrix::new(a.vocab.clone(), weights, meta)?,
        epoch_losses: losses,
    })
}
