//! Shared test fixtures: seeded random matrices and a synthetic two-class
//! corpus generator for end-to-end pipeline tests.

use embstab_core::{EmbeddingMatrix, EmbeddingMeta};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// n x d matrix with independent standard normal entries.
pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
}

/// Random d x d orthogonal matrix (Q factor of a Gaussian matrix).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    random_matrix(rng, d, d).qr().q()
}

/// Random n x n positive semidefinite matrix A A^T / n.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    (&a * a.transpose()) / n as f64
}

/// Wrap a matrix as an embedding with vocabulary w0, w1, ...
pub fn embedding(tag: &str, weights: DMatrix<f64>) -> EmbeddingMatrix {
    let vocab: Vec<String> = (0..weights.nrows()).map(|i| format!("w{i}")).collect();
    let d = weights.ncols();
    EmbeddingMatrix::new(vocab, weights, EmbeddingMeta::new(tag, "testkit", 0, d, 32))
        .expect("test fixture is valid")
}

/// Configuration of the synthetic corpus. Sentences carry a latent binary
/// class and a latent topic; class words mark the sentiment, topic words
/// give the co-occurrence matrix low-rank structure beyond the two classes.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub class_words: usize,
    pub class_token_rate: f64,
    /// Probability that a class token comes from the opposite class, so the
    /// label is carried by a weighted mix rather than single marker words.
    pub cross_class_rate: f64,
    pub topic_token_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topics: 6,
            words_per_topic: 180,
            class_words: 60,
            class_token_rate: 0.3,
            cross_class_rate: 0.15,
            topic_token_rate: 0.7,
            min_len: 8,
            max_len: 16,
        }
    }
}

/// Zipf-weighted sampler over 0..n.
struct Zipf {
    cumulative: Vec<f64>,
}

impl Zipf {
    fn new(n: usize) -> Self {
        let mut cumulative = Vec::with_capacity(n);
        let mut total = 0.0;
        for i in 0..n {
            total += 1.0 / (i + 1) as f64;
            cumulative.push(total);
        }
        for c in &mut cumulative {
            *c /= total;
        }
        Zipf { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        self.cumulative.partition_point(|&c| c < u)
    }
}

/// Sentence generator; the same stream backs both the training corpus and
/// the labeled datasets.
pub struct SynthCorpus {
    config: SynthConfig,
    class_zipf: Zipf,
    topic_zipf: Zipf,
    global_zipf: Zipf,
    rng: ChaCha8Rng,
}

impl SynthCorpus {
    pub fn new(config: SynthConfig, seed: u64) -> Self {
        let class_zipf = Zipf::new(config.class_words);
        let topic_zipf = Zipf::new(config.words_per_topic);
        let global_zipf = Zipf::new(config.topics * config.words_per_topic);
        SynthCorpus {
            config,
            class_zipf,
            topic_zipf,
            global_zipf,
            rng: rng(seed),
        }
    }

    /// One sentence and its latent class label.
    pub fn sentence(&mut self) -> (u8, String) {
        let cfg = &self.config;
        let label: u8 = u8::from(self.rng.random::<f64>() < 0.5);
        let topic = self.rng.random_range(0..cfg.topics);
        let len = self.rng.random_range(cfg.min_len..=cfg.max_len);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let roll: f64 = self.rng.random();
            if roll < cfg.class_token_rate {
                let w = self.class_zipf.sample(&mut self.rng);
                let flip = self.rng.random::<f64>() < cfg.cross_class_rate;
                let tag = if (label == 1) != flip { "pos" } else { "neg" };
                words.push(format!("{tag}{w:03}"));
            } else if roll < cfg.class_token_rate + (1.0 - cfg.class_token_rate) * cfg.topic_token_rate
            {
                let w = self.topic_zipf.sample(&mut self.rng);
                words.push(format!("t{topic:02}w{w:03}"));
            } else {
                let w = self.global_zipf.sample(&mut self.rng);
                let t = w / cfg.words_per_topic;
                let i = w % cfg.words_per_topic;
                words.push(format!("t{t:02}w{i:03}"));
            }
        }
        (label, words.join(" "))
    }

    /// Unlabeled corpus lines.
    pub fn corpus(&mut self, sentences: usize) -> Vec<String> {
        (0..sentences).map(|_| self.sentence().1).collect()
    }

    /// Labeled TSV lines `label<TAB>text`.
    pub fn labeled_tsv(&mut self, examples: usize) -> Vec<String> {
        (0..examples)
            .map(|_| {
                let (label, text) = self.sentence();
                format!("{label}\t{text}")
            })
            .collect()
    }
}

/// Keep each line independently with probability `keep`, seeded.
pub fn subsample_lines(lines: &[String], keep: f64, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    lines
        .iter()
        .filter(|_| r.random::<f64>() < keep)
        .cloned()
        .collect()
}
