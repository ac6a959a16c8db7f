//! `embstab`: embedding stability pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod config;
mod experiment;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use rand::SeedableRng;

use embstab_core::alignment::align_pair;
use embstab_core::analysis::{
    fit_factor_trend, fit_linear_log, relative_reduction, spearman, FittedVariable, TrendRecord,
};
use embstab_core::downstream::{
    disagreement, train_bow, BowClassifier, BowTrainConfig, Split, TextDataset,
};
use embstab_core::embedding_store::{harmonize, load_embedding, save_embedding, EmbeddingMeta};
use embstab_core::mc_embedder::{count_cooccurrence, ppmi, train_mc, McConfig};
use embstab_core::measures::{measure_all, CovarianceSpec, KnnConfig, MeasureName};
use embstab_core::oracle::{analytic_disagreement, monte_carlo_disagreement, LabelCovariance};
use embstab_core::quantizer::{optimal_clip, quantize, QuantizationConfig};
use embstab_core::records;
use embstab_core::selection::{
    budget_selection, pairwise_selection_error, precision_baseline_gaps, PrecisionMode,
    SelectionOutcome,
};
use embstab_core::{EmbeddingMatrix, ErrorKind};

#[derive(Parser)]
#[command(name = "embstab", version, about = "Embedding stability measures, quantization, and dimension-precision selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Re-serialize an embedding file, optionally keeping only the top-k rows
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Print summary statistics of an embedding file
    Info { path: PathBuf },
    /// Align a source embedding onto a reference with orthogonal Procrustes
    Align {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the reference restricted to the shared vocabulary
        #[arg(long)]
        ref_out: Option<PathBuf>,
        /// Harmonize vocabularies before aligning (top-k intersection)
        #[arg(long, default_value_t = 10_000)]
        top_k: usize,
    },
    /// Uniformly quantize an embedding to b bits per entry
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        bits: u8,
        /// Clip threshold; picked by squared-error search when omitted
        #[arg(long)]
        clip: Option<f64>,
        /// Embedding whose distribution sets the clip threshold
        #[arg(long)]
        pair_ref: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a matrix-completion embedding from a text corpus
    TrainMc {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 15)]
        window: usize,
        #[arg(long, default_value_t = 5)]
        min_count: u64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0.2)]
        lr: f64,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 20)]
        lr_decay_epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a linear bag-of-words classifier on TSV data
    TrainBow {
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prediction disagreement between two trained classifiers
    Disagree {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long)]
        emb_a: PathBuf,
        #[arg(long)]
        emb_b: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "pair")]
        pair_id: String,
        #[arg(long, default_value = "task")]
        task: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// All five embedding distance measures between a pair
    Measure {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Anchor embeddings E and E~, comma separated
        #[arg(long, value_delimiter = ',')]
        anchors: Vec<PathBuf>,
        #[arg(long, default_value_t = 3.0)]
        alpha: f64,
        #[arg(long, default_value_t = 5)]
        knn_k: usize,
        #[arg(long, default_value_t = 1000)]
        knn_q: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "pair")]
        pair_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Numerically verify the disagreement identity on a random instance
    VerifyProp1 {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        /// Dimension of the second embedding
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long, default_value_t = 3.0)]
        alpha: f64,
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dimension-precision selection from measure and instability tables
    Select {
        #[arg(long)]
        measures: PathBuf,
        #[arg(long)]
        instability: PathBuf,
        #[arg(long, value_parser = ["pairwise", "budget"])]
        mode: String,
        #[arg(long)]
        measure: String,
        /// Restrict the instability table to one task
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spearman correlation of each measure against downstream disagreement
    Analyze {
        #[arg(long)]
        measures: PathBuf,
        #[arg(long)]
        instability: PathBuf,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the linear-log stability trend against memory, dimension, or precision
    FitTrend {
        #[arg(long)]
        instability: PathBuf,
        #[arg(long, default_value_t = 1000.0)]
        cutoff: f64,
        #[arg(long, default_value = "memory", value_parser = ["memory", "dimension", "precision"])]
        factor: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full desk-scale grid from a config file
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind as ClapKind;
            let _ = e.print();
            return match e.kind() {
                ClapKind::DisplayHelp | ClapKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .filter_map(|cause| cause.downcast_ref::<embstab_core::Error>())
                .map(|core| match core.kind() {
                    ErrorKind::Data => 2,
                    ErrorKind::Numerical => 3,
                })
                .next()
                .unwrap_or(2);
            ExitCode::from(code)
        }
    }
}

fn load(path: &Path) -> Result<EmbeddingMatrix> {
    load_embedding(path).with_context(|| format!("loading embedding {}", path.display()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Convert { input, output, top_k } => {
            let x = load(&input)?;
            let x = match top_k {
                Some(k) if k < x.len() => {
                    let (head, _) = harmonize(&x, &x, k)?;
                    head
                }
                _ => x,
            };
            save_embedding(&x, &output)?;
            println!("wrote {} ({} x {})", output.display(), x.len(), x.dim());
            Ok(())
        }
        Command::Info { path } => {
            let x = load(&path)?;
            let w = x.weights();
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for &v in w.iter() {
                min = min.min(v);
                max = max.max(v);
            }
            println!("path: {}", path.display());
            println!("words: {}", x.len());
            println!("dimension: {}", x.dim());
            println!("frobenius_norm: {}", w.norm());
            println!("entry_range: [{min}, {max}]");
            println!(
                "meta: algorithm={} corpus={} seed={} precision_bits={}",
                x.meta().algorithm,
                x.meta().corpus,
                x.meta().seed,
                x.meta().precision_bits
            );
            Ok(())
        }
        Command::Align { reference, src, out, ref_out, top_k } => {
            let x = load(&reference)?;
            let y = load(&src)?;
            let (x, y) = harmonize(&x, &y, top_k)?;
            let (x, aligned) = align_pair(x, y)?;
            save_embedding(&aligned, &out)?;
            println!("wrote {} ({} x {})", out.display(), aligned.len(), aligned.dim());
            if let Some(ref_out) = ref_out {
                save_embedding(&x, &ref_out)?;
                println!("wrote {} (harmonized reference)", ref_out.display());
            }
            Ok(())
        }
        Command::Quantize { input, bits, clip, pair_ref, out } => {
            let x = load(&input)?;
            if bits == 32 {
                save_embedding(&x, &out)?;
                println!("wrote {} (full precision passthrough)", out.display());
                return Ok(());
            }
            let clip = match (clip, pair_ref) {
                (Some(c), _) => c,
                (None, Some(reference)) => optimal_clip(&load(&reference)?, bits)?,
                (None, None) => optimal_clip(&x, bits)?,
            };
            let q = quantize(&x, &QuantizationConfig::new(bits, clip)?);
            save_embedding(&q, &out)?;
            println!("wrote {} (b={bits}, clip={clip})", out.display());
            Ok(())
        }
        Command::TrainMc {
            corpus, dim, window, min_count, epochs, lr, batch, lr_decay_epochs, tol, seed, out,
        } => {
            let text = fs::read_to_string(&corpus)
                .with_context(|| format!("reading corpus {}", corpus.display()))?;
            let docs: Vec<&str> = text.lines().collect();
            let counts = count_cooccurrence(&docs, window, min_count)?;
            let matrix = ppmi(&counts)?;
            let tag = corpus
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let result = train_mc(
                &matrix,
                &McConfig {
                    dim,
                    epochs,
                    lr,
                    batch,
                    seed,
                    lr_decay_epochs,
                    tol,
                    corpus_tag: tag,
                },
            )?;
            save_embedding(&result.embedding, &out)?;
            println!(
                "wrote {} ({} x {dim}); epochs run: {}, final loss: {}",
                out.display(),
                result.embedding.len(),
                result.epoch_losses.len(),
                result.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::TrainBow { emb, data, lr, epochs, batch, seed, out } => {
            let x = load(&emb)?;
            let dataset = TextDataset::load_tsv(&data, Split::Train)?;
            let model = train_bow(&x, &dataset, &BowTrainConfig { lr, epochs, batch, seed })?;
            let json = serde_json::to_string_pretty(&model)?;
            fs::write(&out, json).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} (dim {})", out.display(), model.dim());
            Ok(())
        }
        Command::Disagree { model_a, model_b, emb_a, emb_b, test, pair_id, task, out } => {
            let read_model = |p: &Path| -> Result<BowClassifier> {
                let json = fs::read_to_string(p)
                    .with_context(|| format!("reading model {}", p.display()))?;
                Ok(serde_json::from_str(&json)?)
            };
            let fa = read_model(&model_a)?;
            let fb = read_model(&model_b)?;
            let xa = load(&emb_a)?;
            let xb = load(&emb_b)?;
            let heldout = TextDataset::load_tsv(&test, Split::Test)?;
            let rec = disagreement(&fa, &xa, &fb, &xb, &heldout, &pair_id, &task)?;
            println!(
                "disagreement: {:.4}% (acc_a {:.2}%, acc_b {:.2}%)",
                rec.disagreement_pct, rec.accuracy_a, rec.accuracy_b
            );
            records::write_instability_csv(&out, &[rec])?;
            Ok(())
        }
        Command::Measure { a, b, anchors, alpha, knn_k, knn_q, seed, pair_id, out } => {
            let x = load(&a)?;
            let y = load(&b)?;
            if anchors.len() != 2 {
                bail!("--anchors takes exactly two paths: E,E~");
            }
            let anchor_a = load(&anchors[0])?;
            let anchor_b = load(&anchors[1])?;
            let spec = CovarianceSpec::new(&anchor_a, &anchor_b, alpha)?;
            let queries = knn_q.min(x.len());
            if queries < knn_q {
                eprintln!(
                    "note: knn_q {knn_q} exceeds the vocabulary ({}); using Q = {queries}",
                    x.len()
                );
            }
            let knn = KnnConfig { k: knn_k, queries, seed };
            let rows = measure_all(&x, &y, &spec, &knn, &pair_id)?;
            for r in &rows {
                println!("{}: {}", r.measure_name, r.value);
            }
            records::write_measures_csv(&out, &rows)?;
            Ok(())
        }
        Command::VerifyProp1 { n, d, k, alpha, samples, seed } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut gaussian = |rows: usize, cols: usize| {
                DMatrix::from_fn(rows, cols, |_, _| {
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
                })
            };
            let vocab: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            let emb = |tag: &str, m: DMatrix<f64>| -> Result<EmbeddingMatrix> {
                let cols = m.ncols();
                Ok(EmbeddingMatrix::new(
                    vocab.clone(),
                    m,
                    EmbeddingMeta::new(tag, "random", seed, cols, 32),
                )?)
            };
            let anchor_dim = d.max(k);
            let x = emb("x", gaussian(n, d))?;
            let y = emb("y", gaussian(n, k))?;
            let e = emb("e", gaussian(n, anchor_dim))?;
            let et = emb("et", gaussian(n, anchor_dim))?;
            let spec = CovarianceSpec::new(&e, &et, alpha)?;
            let sigma = LabelCovariance::from_spec(&spec)?;

            let measure = embstab_core::measures::eigenspace_instability(&x, &y, &spec)?;
            let analytic = analytic_disagreement(&x, &y, &sigma)?;
            let mc = monte_carlo_disagreement(&x, &y, &sigma, samples, seed.wrapping_add(1))?;
            println!("eigenspace_instability: {measure}");
            println!("analytic_disagreement:  {analytic}");
            println!("monte_carlo_estimate:   {} (se {})", mc.estimate, mc.std_error);
            let identity_ok = (measure - analytic).abs() <= 1e-8 * analytic.abs().max(1e-12);
            let mc_ok = (mc.estimate - analytic).abs() <= 3.0 * mc.std_error;
            println!(
                "identity: {}; monte carlo within 3 SE: {}",
                if identity_ok { "PASS" } else { "FAIL" },
                if mc_ok { "PASS" } else { "FAIL" }
            );
            if !(identity_ok && mc_ok) {
                return Err(anyhow!(embstab_core::Error::DegenerateMatrix(
                    "disagreement identity check failed".into()
                )));
            }
            Ok(())
        }
        Command::Select { measures, instability, mode, measure, task, out } => {
            let measure = MeasureName::parse(&measure)?;
            let measure_rows = records::read_measures_csv(&measures)?;
            let mut inst_rows = records::read_instability_csv(&instability)?;
            if let Some(task) = task {
                inst_rows.retain(|r| r.task == task);
            }
            let mut rows = Vec::new();
            match mode.as_str() {
                "pairwise" => {
                    let error = pairwise_selection_error(&measure_rows, &inst_rows, measure)?;
                    println!("pairwise selection error: {error:.4}");
                    rows.push(SelectionOutcome {
                        measure_name: measure.as_str().into(),
                        metric: "pairwise_error".into(),
                        value: error,
                    });
                }
                "budget" => {
                    let sel = budget_selection(&measure_rows, &inst_rows, measure)?;
                    println!(
                        "oracle gap: avg {:.4}, worst {:.4} over {} choices",
                        sel.avg_gap,
                        sel.worst_gap,
                        sel.choices.len()
                    );
                    rows.push(SelectionOutcome {
                        measure_name: measure.as_str().into(),
                        metric: "oracle_gap_avg".into(),
                        value: sel.avg_gap,
                    });
                    rows.push(SelectionOutcome {
                        measure_name: measure.as_str().into(),
                        metric: "oracle_gap_worst".into(),
                        value: sel.worst_gap,
                    });
                    for (mode, label) in [
                        (PrecisionMode::High, "high_precision"),
                        (PrecisionMode::Low, "low_precision"),
                    ] {
                        let b = precision_baseline_gaps(&measure_rows, &inst_rows, measure, mode)?;
                        rows.push(SelectionOutcome {
                            measure_name: label.into(),
                            metric: "oracle_gap_avg".into(),
                            value: b.avg_gap,
                        });
                        rows.push(SelectionOutcome {
                            measure_name: label.into(),
                            metric: "oracle_gap_worst".into(),
                            value: b.worst_gap,
                        });
                    }
                }
                other => bail!("unknown mode {other:?}"),
            }
            records::write_selection_csv(&out, &rows)?;
            Ok(())
        }
        Command::Analyze { measures, instability, task, out } => {
            let measure_rows = records::read_measures_csv(&measures)?;
            let mut inst_rows = records::read_instability_csv(&instability)?;
            if let Some(task) = &task {
                inst_rows.retain(|r| r.task == *task);
            }
            if inst_rows.is_empty() {
                bail!(embstab_core::Error::MissingRecords(
                    "no instability rows after the task filter".into()
                ));
            }
            let mut tasks: Vec<String> = inst_rows.iter().map(|r| r.task.clone()).collect();
            tasks.sort();
            tasks.dedup();
            let mut out_rows = Vec::new();
            for task in &tasks {
                let task_rows: Vec<_> =
                    inst_rows.iter().filter(|r| &r.task == task).cloned().collect();
                let disagreement: std::collections::BTreeMap<&str, f64> = task_rows
                    .iter()
                    .map(|r| (r.pair_id.as_str(), r.disagreement_pct))
                    .collect();
                for name in MeasureName::ALL {
                    let mut xs = Vec::new();
                    let mut ys = Vec::new();
                    for m in measure_rows.iter().filter(|m| m.measure_name == name) {
                        if let Some(di) = disagreement.get(m.pair_id.as_str()) {
                            xs.push(m.value);
                            ys.push(*di);
                        }
                    }
                    if xs.len() < 2 {
                        continue;
                    }
                    match spearman(&xs, &ys) {
                        Ok(rho) => out_rows.push(records::CorrelationRow {
                            task: task.clone(),
                            measure_name: name.as_str().into(),
                            spearman: rho,
                        }),
                        Err(embstab_core::Error::DegenerateCorrelation(why)) => {
                            eprintln!("note: skipping {name} for task {task}: {why}");
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            for row in &out_rows {
                println!("{}\t{}\t{:.4}", row.task, row.measure_name, row.spearman);
            }
            records::write_correlations_csv(&out, &out_rows)?;
            Ok(())
        }
        Command::FitTrend { instability, cutoff, factor, out } => {
            let inst_rows = records::read_instability_csv(&instability)?;
            let factor = match factor.as_str() {
                "memory" => FittedVariable::Memory,
                "dimension" => FittedVariable::Dimension,
                "precision" => FittedVariable::Precision,
                other => bail!("unknown factor {other:?}"),
            };
            let with_config: Vec<(embstab_core::selection::PairRecord, f64, String)> = inst_rows
                .iter()
                .map(|r| {
                    let p = embstab_core::selection::PairRecord::from_pair_id(&r.pair_id)?;
                    Ok((p, r.disagreement_pct, r.task.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            match factor {
                FittedVariable::Memory => {
                    let trend: Vec<TrendRecord> = with_config
                        .iter()
                        .map(|(p, di, task)| TrendRecord {
                            task: task.clone(),
                            memory_bits: p.memory_bits as f64,
                            disagreement_pct: *di,
                        })
                        .collect();
                    let fit = fit_linear_log(&trend, cutoff)?;
                    println!("slope: {:.6} percentage points per doubling", fit.slope);
                    for (task, c) in &fit.intercepts {
                        println!("intercept[{task}]: {c:.6}");
                        let level = trend
                            .iter()
                            .filter(|r| &r.task == task)
                            .map(|r| r.disagreement_pct)
                            .sum::<f64>()
                            / trend.iter().filter(|r| &r.task == task).count() as f64;
                        if level > 0.0 {
                            println!(
                                "relative reduction at mean disagreement ({level:.2}%): {:.1}%",
                                relative_reduction(&fit, level)?
                            );
                        }
                    }
                    let rows: Vec<records::TrendRow> = trend
                        .iter()
                        .filter(|r| r.memory_bits < cutoff)
                        .map(|r| records::TrendRow {
                            task: r.task.clone(),
                            memory_bits: r.memory_bits,
                            disagreement_pct: r.disagreement_pct,
                            fitted_pct: fit.predict(&r.task, r.memory_bits).expect("fitted task"),
                            slope: fit.slope,
                            intercept: fit.intercepts[&r.task],
                        })
                        .collect();
                    records::write_trend_csv(&out, &rows)?;
                }
                FittedVariable::Dimension | FittedVariable::Precision => {
                    let recs: Vec<embstab_core::analysis::FactorRecord> = with_config
                        .iter()
                        .map(|(p, di, task)| embstab_core::analysis::FactorRecord {
                            task: task.clone(),
                            dimension: p.dimension as f64,
                            precision: p.precision_bits as f64,
                            disagreement_pct: *di,
                        })
                        .collect();
                    let fit = fit_factor_trend(&recs, factor)?;
                    println!(
                        "slope ({}): {:.6} percentage points per doubling",
                        factor.as_str(),
                        fit.slope
                    );
                    let rows: Vec<records::TrendRow> = recs
                        .iter()
                        .map(|r| {
                            let group = match factor {
                                FittedVariable::Dimension => {
                                    format!("{}|precision={}", r.task, r.precision)
                                }
                                _ => format!("{}|dimension={}", r.task, r.dimension),
                            };
                            let var = match factor {
                                FittedVariable::Dimension => r.dimension,
                                _ => r.precision,
                            };
                            records::TrendRow {
                                task: group.clone(),
                                memory_bits: var,
                                disagreement_pct: r.disagreement_pct,
                                fitted_pct: fit.predict(&group, var).expect("fitted group"),
                                slope: fit.slope,
                                intercept: fit.intercepts[&group],
                            }
                        })
                        .collect();
                    records::write_trend_csv(&out, &rows)?;
                }
            }
            Ok(())
        }
        Command::Experiment { config } => {
            let config = config::ExperimentConfig::load(&config)?;
            let output = experiment::run_experiment(&config)?;
            println!("run directory: {}", output.run_dir.display());
            Ok(())
        }
    }
}
