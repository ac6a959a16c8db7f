//! Linear bag-of-words text classifier and the downstream instability
//! computation: the percentage of heldout predictions that differ between two
//! models trained on two embeddings.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding_store::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "validation")]
    Validation,
    #[serde(rename = "test")]
    Test,
}

/// Binary-labeled, whitespace-tokenized text examples.
#[derive(Debug, Clone)]
pub struct TextDataset {
    examples: Vec<(u8, Vec<String>)>,
    split: Split,
}

impl TextDataset {
    pub fn new(examples: Vec<(u8, Vec<String>)>, split: Split) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidConfig("dataset is empty".into()));
        }
        for (label, tokens) in &examples {
            if *label > 1 {
                return Err(Error::InvalidRecord(format!("label {label} is not binary")));
            }
            if tokens.is_empty() {
                return Err(Error::InvalidRecord("example has no tokens".into()));
            }
        }
        Ok(TextDataset { examples, split })
    }

    /// Load TSV lines `label<TAB>text`.
    pub fn load_tsv(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut examples = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (label, body) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: "expected label<TAB>text".into(),
            })?;
            let label: u8 = label.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("label {label:?} is not 0 or 1"),
            })?;
            let tokens: Vec<String> = body.split_whitespace().map(str::to_string).collect();
            if label > 1 || tokens.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: "label must be 0/1 and text non-empty".into(),
                });
            }
            examples.push((label, tokens));
        }
        TextDataset::new(examples, split)
    }

    pub fn examples(&self) -> &[(u8, Vec<String>)] {
        &self.examples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Mean of the embedding rows of in-vocabulary tokens; out-of-vocabulary
/// tokens are skipped and an all-OOV sentence maps to the zero vector.
pub fn featurize(x: &EmbeddingMatrix, tokens: &[impl AsRef<str>]) -> DVector<f64> {
    let mut sum = DVector::<f64>::zeros(x.dim());
    let mut hits = 0usize;
    for token in tokens {
        if let Some(row) = x.token_index(token.as_ref()) {
            sum += x.weights().row(row).transpose();
            hits += 1;
        }
    }
    if hits > 0 {
        sum /= hits as f64;
    }
    sum
}

/// Linear classifier over averaged embeddings; the last weight is the bias.
/// A score of exactly zero predicts class 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowClassifier {
    weights: Vec<f64>,
}

impl BowClassifier {
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("weights must be finite and non-empty".into()));
        }
        Ok(BowClassifier { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Feature dimension excluding the bias.
    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn score(&self, features: &DVector<f64>) -> f64 {
        let d = self.dim();
        let mut s = self.weights[d]; // bias
        for i in 0..d {
            s += self.weights[i] * features[i];
        }
        s
    }

    pub fn predict(&self, features: &DVector<f64>) -> u8 {
        u8::from(self.score(features) >= 0.0)
    }

    pub fn predict_tokens(&self, x: &EmbeddingMatrix, tokens: &[impl AsRef<str>]) -> u8 {
        self.predict(&featurize(x, tokens))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BowTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for BowTrainConfig {
    fn default() -> Self {
        BowTrainConfig {
            lr: 0.001,
            epochs: 100,
            batch: 32,
            seed: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Train a logistic-loss linear classifier with Adam, zero-initialized
/// weights and seeded shuffling. Deterministic given the seed.
pub fn train_bow(
    x: &EmbeddingMatrix,
    dataset: &TextDataset,
    config: &BowTrainConfig,
) -> Result<BowClassifier> {
    if config.batch == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let d = x.dim();
    let features: Vec<DVector<f64>> = dataset
        .examples
        .iter()
        .map(|(_, tokens)| featurize(x, tokens))
        .collect();
    let labels: Vec<f64> = dataset
        .examples
        .iter()
        .map(|(y, _)| if *y == 1 { 1.0 } else { -1.0 })
        .collect();

    let mut w = vec![0.0f64; d + 1];
    let mut m = vec![0.0f64; d + 1];
    let mut v = vec![0.0f64; d + 1];
    let mut grad = vec![0.0f64; d + 1];
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &idx in batch {
                let f = &features[idx];
                let y = labels[idx];
                let mut score = w[d];
                for i in 0..d {
                    score += w[i] * f[i];
                }
                let z = y * score;
                // Stable log(1 + exp(-z)) and its sigmoid factor.
                epoch_loss += if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                };
                let sig = 1.0 / (1.0 + z.exp()); // sigma(-z)
                let coeff = -y * sig;
                for i in 0..d {
                    grad[i] += coeff * f[i];
                }
                grad[d] += coeff;
            }
            let scale = 1.0 / batch.len() as f64;
            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
            for i in 0..=d {
                let g = grad[i] * scale;
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= config.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
    }
    BowClassifier::from_weights(w)
}

/// One row of the instability table: Definition-1 disagreement plus each
/// model's accuracy, all as percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityRecord {
    pub pair_id: String,
    pub task: String,
    pub disagreement_pct: f64,
    #[serde(rename = "acc_a")]
    pub accuracy_a: f64,
    #[serde(rename = "acc_b")]
    pub accuracy_b: f64,
}

impl InstabilityRecord {
    pub fn new(
        pair_id: &str,
        task: &str,
        disagreement_pct: f64,
        accuracy_a: f64,
        accuracy_b: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("disagreement", disagreement_pct),
            ("acc_a", accuracy_a),
            ("acc_b", accuracy_b),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::InvalidRecord(format!(
                    "{name} = {v} is outside [0, 100]"
                )));
            }
        }
        Ok(InstabilityRecord {
            pair_id: pair_id.to_string(),
            task: task.to_string(),
            disagreement_pct,
            accuracy_a,
            accuracy_b,
        })
    }
}

/// Percentage of heldout examples where the two models' predictions differ,
/// each model featurizing with its own embedding.
pub fn disagreement(
    model_a: &BowClassifier,
    emb_a: &EmbeddingMatrix,
    model_b: &BowClassifier,
    emb_b: &EmbeddingMatrix,
    heldout: &TextDataset,
    pair_id: &str,
    task: &str,
) -> Result<InstabilityRecord> {
    let mut differ = 0usize;
    let mut correct_a = 0usize;
    let mut correct_b = 0usize;
    for (label, tokens) in heldout.examples() {
        let pa = model_a.predict_tokens(emb_a, tokens);
        let pb = model_b.predict_tokens(emb_b, tokens);
        differ += usize::from(pa != pb);
        correct_a += usize::from(pa == *label);
        correct_b += usize::from(pb == *label);
    }
    let n = heldout.len() as f64;
    InstabilityRecord::new(
        pair_id,
        task,
        100.0 * differ as f64 / n,
        100.0 * correct_a as f64 / n,
        100.0 * correct_b as f64 / n,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{embedding, rng};
    use nalgebra::DMatrix;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn two_token_embedding() -> EmbeddingMatrix {
        embedding(
            "e",
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
        )
    }

    #[test]
    fn featurize_single_token_is_its_vector() {
        let x = two_token_embedding();
        let f = featurize(&x, &toks(&["w0"]));
        assert_eq!(f.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn featurize_opposite_vectors_cancel() {
        let x = two_token_embedding();
        let f = featurize(&x, &toks(&["w0", "w1"]));
        assert_eq!(f.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn featurize_skips_oov_tokens() {
        let x = two_token_embedding();
        // Mean over the two in-vocab tokens only: (1 + -1)/2 would be 0, so
        // use w0 twice via a 3-token case: mean of {w0, w0} = (1,0).
        let f = featurize(&x, &toks(&["w0", "missing", "w0"]));
        assert_eq!(f.as_slice(), &[1.0, 0.0]);
        let all_oov = featurize(&x, &toks(&["nope"]));
        assert_eq!(all_oov.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn separable_instance_fits_perfectly() {
        let x = two_token_embedding();
        let data = TextDataset::new(
            vec![(1, toks(&["w0"])), (0, toks(&["w1"]))],
            Split::Train,
        )
        .unwrap();
        let model = train_bow(&x, &data, &BowTrainConfig::default()).unwrap();
        assert_eq!(model.predict_tokens(&x, &toks(&["w0"])), 1);
        assert_eq!(model.predict_tokens(&x, &toks(&["w1"])), 0);
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let x = two_token_embedding();
        let data = TextDataset::new(
            vec![
                (1, toks(&["w0"])),
                (0, toks(&["w1"])),
                (1, toks(&["w0", "w0"])),
                (0, toks(&["w1", "w1"])),
            ],
            Split::Train,
        )
        .unwrap();
        let cfg = BowTrainConfig {
            epochs: 10,
            ..Default::default()
        };
        let a = train_bow(&x, &data, &cfg).unwrap();
        let b = train_bow(&x, &data, &cfg).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn zero_epochs_gives_zero_weights_and_tiebreak_class() {
        let x = two_token_embedding();
        let data =
            TextDataset::new(vec![(0, toks(&["w1"]))], Split::Train).unwrap();
        let cfg = BowTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let model = train_bow(&x, &data, &cfg).unwrap();
        assert!(model.weights().iter().all(|&w| w == 0.0));
        assert_eq!(model.predict_tokens(&x, &toks(&["w1"])), 1);
    }

    #[test]
    fn disagreement_extremes() {
        let x = two_token_embedding();
        let heldout = TextDataset::new(
            vec![(1, toks(&["w0"])), (0, toks(&["w1"]))],
            Split::Test,
        )
        .unwrap();
        let f = BowClassifier::from_weights(vec![1.0, 0.0, 0.0]).unwrap();
        let same = disagreement(&f, &x, &f, &x, &heldout, "p", "t").unwrap();
        assert_eq!(same.disagreement_pct, 0.0);

        let flipped = BowClassifier::from_weights(vec![-1.0, 0.0, -1e-9]).unwrap();
        let opposite = disagreement(&f, &x, &flipped, &x, &heldout, "p", "t").unwrap();
        assert_eq!(opposite.disagreement_pct, 100.0);
    }

    #[test]
    fn disagreement_counts_exactly() {
        // Ten one-token examples over a 10-word 1-d vocabulary; model b sees
        // three sign-flipped vectors, so exactly 3 of 10 predictions differ.
        let mut values = vec![1.0f64; 10];
        let a_emb = embedding("a", DMatrix::from_column_slice(10, 1, &values));
        values[2] = -1.0;
        values[5] = -1.0;
        values[7] = -1.0;
        let b_emb = embedding("b", DMatrix::from_column_slice(10, 1, &values));
        let model = BowClassifier::from_weights(vec![1.0, 0.0]).unwrap();
        let heldout = TextDataset::new(
            (0..10).map(|i| (1u8, toks(&[&format!("w{i}")]))).collect(),
            Split::Test,
        )
        .unwrap();
        let rec = disagreement(&model, &a_emb, &model, &b_emb, &heldout, "p", "t").unwrap();
        assert_eq!(rec.disagreement_pct, 30.0);
        // An accuracy delta needs a prediction flip.
        assert!((rec.accuracy_a - rec.accuracy_b).abs() <= rec.disagreement_pct);
    }

    #[test]
    fn disagreement_is_symmetric() {
        let mut r = rng(50);
        let x = embedding("x", crate::testutil::random_matrix(&mut r, 6, 2));
        let y = embedding("y", crate::testutil::random_matrix(&mut r, 6, 2));
        let heldout = TextDataset::new(
            (0..6).map(|i| ((i % 2) as u8, toks(&[&format!("w{i}")]))).collect(),
            Split::Test,
        )
        .unwrap();
        let f = BowClassifier::from_weights(vec![1.0, -0.3, 0.1]).unwrap();
        let g = BowClassifier::from_weights(vec![-0.5, 0.8, 0.0]).unwrap();
        let ab = disagreement(&f, &x, &g, &y, &heldout, "p", "t").unwrap();
        let ba = disagreement(&g, &y, &f, &x, &heldout, "p", "t").unwrap();
        assert_eq!(ab.disagreement_pct, ba.disagreement_pct);
    }

    #[test]
    fn tsv_loader_round_trips_and_rejects_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.tsv");
        std::fs::write(&path, "1\tgood fine movie\n0\tbad awful\n").unwrap();
        let data = TextDataset::load_tsv(&path, Split::Train).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.examples()[0].0, 1);
        assert_eq!(data.examples()[1].1.len(), 2);

        std::fs::write(&path, "2\toops\n").unwrap();
        assert!(TextDataset::load_tsv(&path, Split::Train).is_err());
        std::fs::write(&path, "no tabs here\n").unwrap();
        assert!(TextDataset::load_tsv(&path, Split::Train).is_err());
    }
}
