//! The end-to-end experiment driver: train two corpus variants across the
//! dimension grid, align, quantize across the precision grid, measure, train
//! downstream models, and run the analysis and selection layers. Stages
//! communicate only through files so any stage can be rerun in isolation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;

use embstab_core::alignment::align_pair;
use embstab_core::analysis::{fit_linear_log, spearman, TrendRecord};
use embstab_core::downstream::{disagreement, train_bow, BowTrainConfig, InstabilityRecord, Split, TextDataset};
use embstab_core::embedding_store::{harmonize, EmbeddingMatrix};
use embstab_core::mc_embedder::{count_cooccurrence, ppmi, train_mc, CooccurrenceMatrix, McConfig};
use embstab_core::measures::{measure_all, CovarianceSpec, KnnConfig, MeasureName, MeasureRecord};
use embstab_core::quantizer::quantize_pair;
use embstab_core::records;
use embstab_core::selection::{
    budget_selection, pairwise_selection_error, precision_baseline_gaps, PairRecord,
    PrecisionMode, SelectionOutcome,
};

use crate::config::ExperimentConfig;
use crate::manifest::{hash_file, sha256_hex, InputHash, Manifest};

const ALGORITHM: &str = "mc";

pub struct ExperimentOutput {
    pub run_dir: PathBuf,
}

struct Stage<'a>(&'a str);

impl<'a> Stage<'a> {
    fn wrap<T>(&self, r: std::result::Result<T, impl Into<anyhow::Error>>) -> Result<T> {
        r.map_err(|e| e.into().context(format!("stage {} failed", self.0)))
    }
}

/// An aligned, harmonized full-precision pair for one (dimension, seed) cell.
struct TrainedPair {
    dim: usize,
    seed: u64,
    a: EmbeddingMatrix,
    b: EmbeddingMatrix,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let config_hash = sha256_hex(config.canonical().as_bytes());
    let run_dir = config.out_dir.join(&config_hash[..12]);
    fs::create_dir_all(&run_dir)
        .with_context(|| format!("creating run directory {}", run_dir.display()))?;

    let stage = Stage("manifest");
    let inputs = stage.wrap(manifest_inputs(config))?;
    let grid_cells = config.dims.len() * config.bits.len() * config.seeds.len();
    Manifest {
        tool: "embstab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash.clone(),
        inputs,
        grid_cells,
    }
    .write(&run_dir.join("manifest.json"))?;

    let stage = Stage("load-corpora");
    let corpus_a = stage.wrap(read_lines(&config.corpus_a))?;
    let corpus_b = stage.wrap(read_lines(&config.corpus_b))?;
    let train_set = stage.wrap(TextDataset::load_tsv(&config.train_data, Split::Train))?;
    let test_set = stage.wrap(TextDataset::load_tsv(&config.test_data, Split::Test))?;

    let stage = Stage("cooccurrence");
    let ppmi_a = stage.wrap(build_ppmi(&corpus_a, config))?;
    let ppmi_b = stage.wrap(build_ppmi(&corpus_b, config))?;

    let stage = Stage("train-embeddings");
    let cells: Vec<(usize, u64)> = config
        .dims
        .iter()
        .flat_map(|&d| config.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let trained: Vec<TrainedPair> = stage.wrap(
        cells
            .par_iter()
            .map(|&(dim, seed)| train_cell(&ppmi_a, &ppmi_b, dim, seed, config))
            .collect::<Result<Vec<_>>>(),
    )?;
    let pair_index: BTreeMap<(usize, u64), usize> = trained
        .iter()
        .enumerate()
        .map(|(i, p)| ((p.dim, p.seed), i))
        .collect();

    // Anchors: the highest-dimensional full-precision pair of the same seed.
    let max_dim = *config.dims.iter().max().expect("non-empty dims");

    let stage = Stage("measure-and-downstream");
    let grid: Vec<(usize, u8, u64)> = config
        .dims
        .iter()
        .flat_map(|&d| {
            config
                .bits
                .iter()
                .flat_map(move |&b| config.seeds.iter().map(move |&s| (d, b, s)))
        })
        .collect();
    let results: Vec<(PairRecord, Vec<MeasureRecord>, InstabilityRecord)> = stage.wrap(
        grid.par_iter()
            .map(|&(dim, bits, seed)| {
                let pair = &trained[pair_index[&(dim, seed)]];
                let anchor = &trained[pair_index[&(max_dim, seed)]];
                measure_cell(pair, anchor, bits, config, &train_set, &test_set)
            })
            .collect::<Result<Vec<_>>>(),
    )?;

    let mut pairs: Vec<PairRecord> = Vec::new();
    let mut measures: Vec<MeasureRecord> = Vec::new();
    let mut instability: Vec<InstabilityRecord> = Vec::new();
    for (pair, ms, inst) in results {
        pairs.push(pair);
        measures.extend(ms);
        instability.push(inst);
    }
    pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    measures.sort_by(|a, b| {
        a.pair_id
            .cmp(&b.pair_id)
            .then(a.measure_name.as_str().cmp(b.measure_name.as_str()))
    });
    instability.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));

    let stage = Stage("write-tables");
    stage.wrap(records::write_pairs_csv(run_dir.join("pairs.csv"), &pairs))?;
    stage.wrap(records::write_measures_csv(run_dir.join("measures.csv"), &measures))?;
    stage.wrap(records::write_instability_csv(
        run_dir.join("instability.csv"),
        &instability,
    ))?;

    let stage = Stage("correlations");
    let correlations = stage.wrap(correlation_rows(&measures, &instability, &config.task))?;
    stage.wrap(records::write_correlations_csv(
        run_dir.join("correlations.csv"),
        &correlations,
    ))?;

    let stage = Stage("selection");
    let selection = stage.wrap(selection_rows(&measures, &instability))?;
    stage.wrap(records::write_selection_csv(
        run_dir.join("selection.csv"),
        &selection,
    ))?;

    let stage = Stage("trend");
    let trend = stage.wrap(trend_rows(&pairs, &instability, config.trend_cutoff))?;
    stage.wrap(records::write_trend_csv(run_dir.join("trend.csv"), &trend))?;

    Ok(ExperimentOutput { run_dir })
}

fn manifest_inputs(config: &ExperimentConfig) -> Result<Vec<InputHash>> {
    [
        &config.corpus_a,
        &config.corpus_b,
        &config.train_data,
        &config.test_data,
    ]
    .into_iter()
    .map(|p| {
        Ok(InputHash {
            path: p.display().to_string(),
            sha256: hash_file(p)?,
        })
    })
    .collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn build_ppmi(corpus: &[String], config: &ExperimentConfig) -> Result<CooccurrenceMatrix> {
    let counts = count_cooccurrence(corpus, config.window, config.min_count)?;
    Ok(ppmi(&counts)?)
}

fn train_cell(
    ppmi_a: &CooccurrenceMatrix,
    ppmi_b: &CooccurrenceMatrix,
    dim: usize,
    seed: u64,
    config: &ExperimentConfig,
) -> Result<TrainedPair> {
    let mc = |matrix: &CooccurrenceMatrix, tag: &str| -> Result<EmbeddingMatrix> {
        let cfg = McConfig {
            dim,
            epochs: config.mc_epochs,
            lr: config.mc_lr,
            batch: config.mc_batch,
            seed,
            lr_decay_epochs: config.mc_lr_decay_epochs,
            tol: config.mc_tol,
            corpus_tag: tag.to_string(),
        };
        Ok(train_mc(matrix, &cfg)?.embedding)
    };
    let a = mc(ppmi_a, "a").with_context(|| format!("training d={dim} seed={seed} on corpus a"))?;
    let b = mc(ppmi_b, "b").with_context(|| format!("training d={dim} seed={seed} on corpus b"))?;
    let (a, b) = harmonize(&a, &b, config.top_k)?;
    let (a, b) = align_pair(a, b)?;
    Ok(TrainedPair { dim, seed, a, b })
}

fn measure_cell(
    pair: &TrainedPair,
    anchor: &TrainedPair,
    bits: u8,
    config: &ExperimentConfig,
    train_set: &TextDataset,
    test_set: &TextDataset,
) -> Result<(PairRecord, Vec<MeasureRecord>, InstabilityRecord)> {
    let record = PairRecord::new(ALGORITHM, pair.seed, pair.dim, bits)?;
    let (qa, qb) = quantize_pair(&pair.a, &pair.b, bits)?;

    let spec = CovarianceSpec::new(&anchor.a, &anchor.b, config.alpha)?;
    let n = qa.len();
    let queries = config.knn_q.min(n);
    if queries < config.knn_q {
        eprintln!(
            "note: knn_q {} exceeds the harmonized vocabulary ({n}); using Q = {queries}",
            config.knn_q
        );
    }
    let knn = KnnConfig {
        k: config.knn_k,
        queries,
        seed: config.measure_seed,
    };
    let measures = measure_all(&qa, &qb, &spec, &knn, &record.pair_id)?;

    let seed_a = pair.seed;
    let seed_b = if config.matched_seeds {
        pair.seed
    } else {
        pair.seed.wrapping_add(1_000_003)
    };
    let bow = |seed: u64| BowTrainConfig {
        lr: config.bow_lr,
        epochs: config.bow_epochs,
        batch: config.bow_batch,
        seed,
    };
    let model_a = train_bow(&qa, train_set, &bow(seed_a))?;
    let model_b = train_bow(&qb, train_set, &bow(seed_b))?;
    let inst = disagreement(
        &model_a,
        &qa,
        &model_b,
        &qb,
        test_set,
        &record.pair_id,
        &config.task,
    )?;
    Ok((record, measures, inst))
}

fn correlation_rows(
    measures: &[MeasureRecord],
    instability: &[InstabilityRecord],
    task: &str,
) -> Result<Vec<records::CorrelationRow>> {
    let disagreement: BTreeMap<&str, f64> = instability
        .iter()
        .map(|r| (r.pair_id.as_str(), r.disagreement_pct))
        .collect();
    let mut rows = Vec::new();
    for name in MeasureName::ALL {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for m in measures.iter().filter(|m| m.measure_name == name) {
            let di = disagreement
                .get(m.pair_id.as_str())
                .ok_or_else(|| anyhow!("pair {} missing from instability table", m.pair_id))?;
            xs.push(m.value);
            ys.push(*di);
        }
        match spearman(&xs, &ys) {
            Ok(rho) => rows.push(records::CorrelationRow {
                task: task.to_string(),
                measure_name: name.as_str().to_string(),
                spearman: rho,
            }),
            Err(embstab_core::Error::DegenerateCorrelation(why)) => {
                eprintln!("note: skipping correlation for {name}: {why}");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rows)
}

fn selection_rows(
    measures: &[MeasureRecord],
    instability: &[InstabilityRecord],
) -> Result<Vec<SelectionOutcome>> {
    let mut rows = Vec::new();
    for name in MeasureName::ALL {
        let error = pairwise_selection_error(measures, instability, name)?;
        rows.push(SelectionOutcome {
            measure_name: name.as_str().to_string(),
            metric: "pairwise_error".into(),
            value: error,
        });
    }
    // Budget metrics exist only when some budget has several candidates.
    match budget_selection(measures, instability, MeasureName::Eis) {
        Ok(_) => {
            for name in MeasureName::ALL {
                let sel = budget_selection(measures, instability, name)?;
                rows.push(SelectionOutcome {
                    measure_name: name.as_str().to_string(),
                    metric: "oracle_gap_avg".into(),
                    value: sel.avg_gap,
                });
                rows.push(SelectionOutcome {
                    measure_name: name.as_str().to_string(),
                    metric: "oracle_gap_worst".into(),
                    value: sel.worst_gap,
                });
            }
            for (mode, label) in [
                (PrecisionMode::High, "high_precision"),
                (PrecisionMode::Low, "low_precision"),
            ] {
                let sel =
                    precision_baseline_gaps(measures, instability, MeasureName::Eis, mode)?;
                rows.push(SelectionOutcome {
                    measure_name: label.into(),
                    metric: "oracle_gap_avg".into(),
                    value: sel.avg_gap,
                });
                rows.push(SelectionOutcome {
                    measure_name: label.into(),
                    metric: "oracle_gap_worst".into(),
                    value: sel.worst_gap,
                });
            }
        }
        Err(embstab_core::Error::NoMultiCandidateBudgets) => {
            eprintln!("note: no memory budget has two candidates; skipping budget selection");
        }
        Err(e) => return Err(e.into()),
    }
    Ok(rows)
}

fn trend_rows(
    pairs: &[PairRecord],
    instability: &[InstabilityRecord],
    cutoff: f64,
) -> Result<Vec<records::TrendRow>> {
    let memory: BTreeMap<&str, u64> = pairs
        .iter()
        .map(|p| (p.pair_id.as_str(), p.memory_bits))
        .collect();
    let trend_records: Vec<TrendRecord> = instability
        .iter()
        .map(|r| {
            let m = memory
                .get(r.pair_id.as_str())
                .ok_or_else(|| anyhow!("pair {} missing from pairs table", r.pair_id))?;
            Ok(TrendRecord {
                task: r.task.clone(),
                memory_bits: *m as f64,
                disagreement_pct: r.disagreement_pct,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_linear_log(&trend_records, cutoff)?;
    let mut rows: Vec<records::TrendRow> = trend_records
        .iter()
        .filter(|r| r.memory_bits < cutoff)
        .map(|r| records::TrendRow {
            task: r.task.clone(),
            memory_bits: r.memory_bits,
            disagreement_pct: r.disagreement_pct,
            fitted_pct: fit.predict(&r.task, r.memory_bits).expect("task was fitted"),
            slope: fit.slope,
            intercept: fit.intercepts[&r.task],
        })
        .collect();
    rows.sort_by(|a, b| {
        a.task
            .cmp(&b.task)
            .then(a.memory_bits.partial_cmp(&b.memory_bits).expect("finite"))
            .then(a.disagreement_pct.partial_cmp(&b.disagreement_pct).expect("finite"))
    });
    Ok(rows)
}
