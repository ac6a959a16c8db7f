//! Flat key = value experiment configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. List values are comma-separated. See the README for the full key
//! reference.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub corpus_a: PathBuf,
    pub corpus_b: PathBuf,
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    pub task: String,
    pub out_dir: PathBuf,
    pub dims: Vec<usize>,
    pub bits: Vec<u8>,
    pub seeds: Vec<u64>,
    pub top_k: usize,
    pub window: usize,
    pub min_count: u64,
    pub mc_epochs: usize,
    pub mc_lr: f64,
    pub mc_batch: usize,
    pub mc_lr_decay_epochs: usize,
    pub mc_tol: f64,
    pub alpha: f64,
    pub knn_k: usize,
    pub knn_q: usize,
    pub measure_seed: u64,
    pub bow_lr: f64,
    pub bow_epochs: usize,
    pub bow_batch: usize,
    pub matched_seeds: bool,
    pub trend_cutoff: f64,
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| anyhow::anyhow!("bad element {s:?} in {key}"))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {} is not key = value: {line:?}", idx + 1);
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Self::from_map(&map)
    }

    fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |key: &str| -> Result<&String> {
            map.get(key).ok_or_else(|| anyhow::anyhow!("missing config key {key}"))
        };
        let get_or = |key: &str, default: &str| -> String {
            map.get(key).cloned().unwrap_or_else(|| default.to_string())
        };
        let known = [
            "corpus_a", "corpus_b", "train_data", "test_data", "task", "out_dir", "dims", "bits",
            "seeds", "top_k", "window", "min_count", "mc_epochs", "mc_lr", "mc_batch",
            "mc_lr_decay_epochs", "mc_tol", "alpha", "knn_k", "knn_q", "measure_seed", "bow_lr",
            "bow_epochs", "bow_batch", "matched_seeds", "trend_cutoff",
        ];
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                bail!("unknown config key {key:?}");
            }
        }

        let config = ExperimentConfig {
            corpus_a: PathBuf::from(get("corpus_a")?),
            corpus_b: PathBuf::from(get("corpus_b")?),
            train_data: PathBuf::from(get("train_data")?),
            test_data: PathBuf::from(get("test_data")?),
            task: get("task")?.clone(),
            out_dir: PathBuf::from(get("out_dir")?),
            dims: parse_list(get("dims")?, "dims")?,
            bits: parse_list(get("bits")?, "bits")?,
            seeds: parse_list(get("seeds")?, "seeds")?,
            top_k: get_or("top_k", "10000").parse().context("top_k")?,
            window: get_or("window", "15").parse().context("window")?,
            min_count: get_or("min_count", "5").parse().context("min_count")?,
            mc_epochs: get_or("mc_epochs", "50").parse().context("mc_epochs")?,
            mc_lr: get_or("mc_lr", "0.2").parse().context("mc_lr")?,
            mc_batch: get_or("mc_batch", "128").parse().context("mc_batch")?,
            mc_lr_decay_epochs: get_or("mc_lr_decay_epochs", "20")
                .parse()
                .context("mc_lr_decay_epochs")?,
            mc_tol: get_or("mc_tol", "0.0001").parse().context("mc_tol")?,
            alpha: get_or("alpha", "3").parse().context("alpha")?,
            knn_k: get_or("knn_k", "5").parse().context("knn_k")?,
            knn_q: get_or("knn_q", "1000").parse().context("knn_q")?,
            measure_seed: get_or("measure_seed", "42").parse().context("measure_seed")?,
            bow_lr: get_or("bow_lr", "0.001").parse().context("bow_lr")?,
            bow_epochs: get_or("bow_epochs", "100").parse().context("bow_epochs")?,
            bow_batch: get_or("bow_batch", "32").parse().context("bow_batch")?,
            matched_seeds: get_or("matched_seeds", "true").parse().context("matched_seeds")?,
            trend_cutoff: get_or("trend_cutoff", "1000").parse().context("trend_cutoff")?,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.bits.is_empty() || self.seeds.is_empty() {
            bail!("dims, bits, and seeds must be non-empty");
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            bail!("alpha must be a finite nonnegative number");
        }
        for &b in &self.bits {
            if !embstab_core::embedding_store::VALID_PRECISIONS.contains(&b) {
                bail!("precision {b} not in {:?}", embstab_core::embedding_store::VALID_PRECISIONS);
            }
        }
        Ok(())
    }

    /// Canonical rendering of every field, independent of the config file's
    /// formatting; the manifest hash is taken over this string.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let join =
            |v: &[String]| -> String { v.join(",") };
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let bits: Vec<String> = self.bits.iter().map(|b| b.to_string()).collect();
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "bits={}", join(&bits));
        let _ = writeln!(s, "bow_batch={}", self.bow_batch);
        let _ = writeln!(s, "bow_epochs={}", self.bow_epochs);
        let _ = writeln!(s, "bow_lr={}", self.bow_lr);
        let _ = writeln!(s, "corpus_a={}", self.corpus_a.display());
        let _ = writeln!(s, "corpus_b={}", self.corpus_b.display());
        let _ = writeln!(s, "dims={}", join(&dims));
        let _ = writeln!(s, "knn_k={}", self.knn_k);
        let _ = writeln!(s, "knn_q={}", self.knn_q);
        let _ = writeln!(s, "matched_seeds={}", self.matched_seeds);
        let _ = writeln!(s, "mc_batch={}", self.mc_batch);
        let _ = writeln!(s, "mc_epochs={}", self.mc_epochs);
        let _ = writeln!(s, "mc_lr={}", self.mc_lr);
        let _ = writeln!(s, "mc_lr_decay_epochs={}", self.mc_lr_decay_epochs);
        let _ = writeln!(s, "mc_tol={}", self.mc_tol);
        let _ = writeln!(s, "measure_seed={}", self.measure_seed);
        let _ = writeln!(s, "min_count={}", self.min_count);
        let _ = writeln!(s, "seeds={}", join(&seeds));
        let _ = writeln!(s, "task={}", self.task);
        let _ = writeln!(s, "test_data={}", self.test_data.display());
        let _ = writeln!(s, "top_k={}", self.top_k);
        let _ = writeln!(s, "train_data={}", self.train_data.display());
        let _ = writeln!(s, "trend_cutoff={}", self.trend_cutoff);
        let _ = writeln!(s, "window={}", self.window);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "corpus_a = a.txt\ncorpus_b = b.txt\ntrain_data = tr.tsv\n\
                        test_data = te.tsv\ntask = sent\nout_dir = runs\n\
                        dims = 10,25\nbits = 1,32\nseeds = 0\n";

    fn load_text(text: &str) -> ExperimentConfig {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        fs::write(&path, text).unwrap();
        ExperimentConfig::load(&path).unwrap()
    }

    #[test]
    fn canonical_ignores_formatting_but_tracks_every_field() {
        let a = load_text(BASE);
        // Comments, blank lines, spacing, and key order do not matter.
        let b = load_text(&format!("# comment\n\nseeds=0\n{}", BASE.replace("seeds = 0\n", "")));
        assert_eq!(a.canonical(), b.canonical());

        // Any field change shows up in the canonical form.
        let c = load_text(&format!("{BASE}window = 7\n"));
        assert_ne!(a.canonical(), c.canonical());
        let d = load_text(&BASE.replace("seeds = 0", "seeds = 0,1"));
        assert_ne!(a.canonical(), d.canonical());
    }

    #[test]
    fn unknown_keys_and_bad_grids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        fs::write(&path, format!("{BASE}mystery = 1\n")).unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
        fs::write(&path, BASE.replace("bits = 1,32", "bits = 3")).unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
    }
}
