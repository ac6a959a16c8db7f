//! Dimension-precision selection driven by an embedding distance measure:
//! the pairwise setting (pick the more stable of two configurations) and the
//! memory-budget setting (pick the most stable configuration at each budget),
//! with high/low-precision baselines and oracle-gap metrics.
//!
//! Measure values are compared literally: the configuration with the lower
//! value is selected, so similarity-type measures should be handed in as
//! distances (e.g. 1 - knn). Configuration metadata is carried in the pair
//! id, formatted `algorithm-d<dim>-b<bits>-s<seed>`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::downstream::InstabilityRecord;
use crate::embedding_store::VALID_PRECISIONS;
use crate::error::{Error, Result};
use crate::measures::{MeasureName, MeasureRecord};

/// One embedding-pair configuration: algorithm, seed, dimension, precision,
/// and the memory per word M = d * b in bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub algorithm: String,
    pub seed: u64,
    pub dimension: usize,
    pub precision_bits: u8,
    pub memory_bits: u64,
}

impl PairRecord {
    pub fn new(algorithm: &str, seed: u64, dimension: usize, precision_bits: u8) -> Result<Self> {
        if !VALID_PRECISIONS.contains(&precision_bits) {
            return Err(Error::InvalidRecord(format!(
                "precision {precision_bits} not in {VALID_PRECISIONS:?}"
            )));
        }
        Ok(PairRecord {
            pair_id: format!("{algorithm}-d{dimension}-b{precision_bits}-s{seed}"),
            algorithm: algorithm.to_string(),
            seed,
            dimension,
            precision_bits,
            memory_bits: dimension as u64 * precision_bits as u64,
        })
    }

    /// Parse `algorithm-d<dim>-b<bits>-s<seed>`.
    pub fn from_pair_id(pair_id: &str) -> Result<Self> {
        let parts: Vec<&str> = pair_id.split('-').collect();
        let bad = || Error::InvalidRecord(format!("pair id {pair_id:?} is not algorithm-d<dim>-b<bits>-s<seed>"));
        if parts.len() < 4 {
            return Err(bad());
        }
        let tail = &parts[parts.len() - 3..];
        let dimension: usize = tail[0].strip_prefix('d').and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let precision: u8 = tail[1].strip_prefix('b').and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let seed: u64 = tail[2].strip_prefix('s').and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let algorithm = parts[..parts.len() - 3].join("-");
        if algorithm.is_empty() {
            return Err(bad());
        }
        PairRecord::new(&algorithm, seed, dimension, precision)
    }

    /// Validate the stored invariants (used when reading a pairs table).
    pub fn validate(&self) -> Result<()> {
        if !VALID_PRECISIONS.contains(&self.precision_bits) {
            return Err(Error::InvalidRecord(format!(
                "precision {} not in {VALID_PRECISIONS:?}",
                self.precision_bits
            )));
        }
        if self.memory_bits != self.dimension as u64 * self.precision_bits as u64 {
            return Err(Error::InvalidRecord(format!(
                "memory {} != dimension {} * precision {}",
                self.memory_bits, self.dimension, self.precision_bits
            )));
        }
        Ok(())
    }
}

/// Output rows of the selection CSV: one metric value per measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub measure_name: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
struct Entry {
    pair: PairRecord,
    measure: f64,
    disagreement: f64,
}

/// Join measure and instability tables on pair id for one measure, parsing
/// the configuration out of each pair id.
fn join_tables(
    measures: &[MeasureRecord],
    instabilities: &[InstabilityRecord],
    measure: MeasureName,
) -> Result<Vec<Entry>> {
    let mut tasks: Vec<&str> = instabilities.iter().map(|r| r.task.as_str()).collect();
    tasks.sort_unstable();
    tasks.dedup();
    if tasks.len() > 1 {
        return Err(Error::InvalidRecord(format!(
            "instability table mixes tasks {tasks:?}; filter to one task first"
        )));
    }
    let mut disagreements: BTreeMap<&str, f64> = BTreeMap::new();
    for r in instabilities {
        if disagreements.insert(r.pair_id.as_str(), r.disagreement_pct).is_some() {
            return Err(Error::InvalidRecord(format!(
                "duplicate instability row for pair {:?}",
                r.pair_id
            )));
        }
    }
    let mut entries = Vec::new();
    let mut seen = Vec::new();
    for r in measures.iter().filter(|r| r.measure_name == measure) {
        let disagreement = *disagreements.get(r.pair_id.as_str()).ok_or_else(|| {
            Error::MissingRecords(format!("pair {:?} has no instability row", r.pair_id))
        })?;
        if seen.contains(&r.pair_id.as_str()) {
            return Err(Error::InvalidRecord(format!(
                "duplicate {measure} row for pair {:?}",
                r.pair_id
            )));
        }
        seen.push(r.pair_id.as_str());
        entries.push(Entry {
            pair: PairRecord::from_pair_id(&r.pair_id)?,
            measure: r.value,
            disagreement,
        });
    }
    if entries.is_empty() {
        return Err(Error::MissingRecords(format!("no {measure} rows in the measures table")));
    }
    for pair_id in disagreements.keys() {
        if !seen.contains(pair_id) {
            return Err(Error::MissingRecords(format!(
                "pair {pair_id:?} has no {measure} row"
            )));
        }
    }
    Ok(entries)
}

fn by_seed(entries: Vec<Entry>) -> BTreeMap<u64, Vec<Entry>> {
    let mut map: BTreeMap<u64, Vec<Entry>> = BTreeMap::new();
    for e in entries {
        map.entry(e.pair.seed).or_default().push(e);
    }
    map
}

/// Deterministic preference between equal measure values: higher precision,
/// then lower dimension.
fn prefer(a: &Entry, b: &Entry) -> std::cmp::Ordering {
    a.measure
        .partial_cmp(&b.measure)
        .expect("finite measure values")
        .then(b.pair.precision_bits.cmp(&a.pair.precision_bits))
        .then(a.pair.dimension.cmp(&b.pair.dimension))
}

/// Fraction of same-seed configuration pairs where the measure picks the
/// configuration with the strictly higher true disagreement; averaged over
/// seeds. Ties in true disagreement count the choice as correct.
pub fn pairwise_selection_error(
    measures: &[MeasureRecord],
    instabilities: &[InstabilityRecord],
    measure: MeasureName,
) -> Result<f64> {
    let groups = by_seed(join_tables(measures, instabilities, measure)?);
    let mut seed_rates = Vec::new();
    for (seed, entries) in groups {
        let mut errors = 0usize;
        let mut comparisons = 0usize;
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                let (a, b) = (&entries[i], &entries[j]);
                if a.pair.dimension == b.pair.dimension
                    && a.pair.precision_bits == b.pair.precision_bits
                {
                    return Err(Error::InvalidRecord(format!(
                        "seed {seed} has two rows for the same configuration"
                    )));
                }
                let (chosen, other) = if prefer(a, b) == std::cmp::Ordering::Greater {
                    (b, a)
                } else {
                    (a, b)
                };
                comparisons += 1;
                errors += usize::from(chosen.disagreement > other.disagreement);
            }
        }
        if comparisons == 0 {
            return Err(Error::MissingRecords(format!(
                "seed {seed} has fewer than two configurations"
            )));
        }
        seed_rates.push(errors as f64 / comparisons as f64);
    }
    Ok(seed_rates.iter().sum::<f64>() / seed_rates.len() as f64)
}

/// Per-budget choice made by a selector, with the oracle's pick and the gap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetChoice {
    pub seed: u64,
    pub memory_bits: u64,
    pub selected: String,
    pub oracle: String,
    pub gap: f64,
}

/// Budget-selection result: the mean and worst absolute gap to the oracle
/// (both averaged over seeds) plus the per-budget detail.
#[derive(Debug, Clone)]
pub struct BudgetSelection {
    pub avg_gap: f64,
    pub worst_gap: f64,
    pub choices: Vec<BudgetChoice>,
}

fn budget_selection_by<F>(entries: Vec<Entry>, chooser: F) -> Result<BudgetSelection>
where
    F: Fn(&[Entry]) -> usize,
{
    let groups = by_seed(entries);
    let mut avg_gaps = Vec::new();
    let mut worst_gaps = Vec::new();
    let mut choices = Vec::new();
    let mut any_budget = false;
    for (seed, entries) in groups {
        let mut budgets: BTreeMap<u64, Vec<Entry>> = BTreeMap::new();
        for e in entries {
            budgets.entry(e.pair.memory_bits).or_default().push(e);
        }
        let mut gaps = Vec::new();
        for (memory, candidates) in budgets {
            if candidates.len() < 2 {
                continue;
            }
            any_budget = true;
            let picked = &candidates[chooser(&candidates)];
            let oracle = candidates
                .iter()
                .min_by(|a, b| {
                    a.disagreement
                        .partial_cmp(&b.disagreement)
                        .expect("finite disagreement")
                })
                .expect("non-empty budget");
            let gap = (picked.disagreement - oracle.disagreement).abs();
            gaps.push(gap);
            choices.push(BudgetChoice {
                seed,
                memory_bits: memory,
                selected: picked.pair.pair_id.clone(),
                oracle: oracle.pair.pair_id.clone(),
                gap,
            });
        }
        if !gaps.is_empty() {
            avg_gaps.push(gaps.iter().sum::<f64>() / gaps.len() as f64);
            worst_gaps.push(gaps.iter().cloned().fold(0.0f64, f64::max));
        }
    }
    if !any_budget {
        return Err(Error::NoMultiCandidateBudgets);
    }
    Ok(BudgetSelection {
        avg_gap: avg_gaps.iter().sum::<f64>() / avg_gaps.len() as f64,
        worst_gap: worst_gaps.iter().sum::<f64>() / worst_gaps.len() as f64,
        choices,
    })
}

fn argmin_by<F: Fn(&Entry, &Entry) -> std::cmp::Ordering>(candidates: &[Entry], cmp: F) -> usize {
    let mut best = 0;
    for i in 1..candidates.len() {
        if cmp(&candidates[i], &candidates[best]) == std::cmp::Ordering::Less {
            best = i;
        }
    }
    best
}

/// At each memory budget with at least two candidates, the measure selects
/// the configuration with the lowest value; the oracle selects the
/// configuration with the lowest true disagreement; the gap is the absolute
/// difference in their disagreements.
pub fn budget_selection(
    measures: &[MeasureRecord],
    instabilities: &[InstabilityRecord],
    measure: MeasureName,
) -> Result<BudgetSelection> {
    let entries = join_tables(measures, instabilities, measure)?;
    budget_selection_by(entries, |candidates| argmin_by(candidates, prefer))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionMode {
    High,
    Low,
}

fn baseline_cmp(mode: PrecisionMode) -> impl Fn(&Entry, &Entry) -> std::cmp::Ordering {
    move |a: &Entry, b: &Entry| {
        let bits = match mode {
            PrecisionMode::High => b.pair.precision_bits.cmp(&a.pair.precision_bits),
            PrecisionMode::Low => a.pair.precision_bits.cmp(&b.pair.precision_bits),
        };
        bits.then(a.pair.dimension.cmp(&b.pair.dimension))
    }
}

/// The high/low-precision baseline selections: per budget, the candidate
/// with the maximum (resp. minimum) precision, ties broken by lower
/// dimension. Returns `(seed, memory_bits, pair_id)` triples.
pub fn precision_baseline(
    pairs: &[PairRecord],
    mode: PrecisionMode,
) -> Result<Vec<(u64, u64, String)>> {
    if pairs.is_empty() {
        return Err(Error::MissingRecords("no pair records".into()));
    }
    let entries: Vec<Entry> = pairs
        .iter()
        .map(|p| Entry {
            pair: p.clone(),
            measure: 0.0,
            disagreement: 0.0,
        })
        .collect();
    let cmp = baseline_cmp(mode);
    let mut out = Vec::new();
    for (seed, group) in by_seed(entries) {
        let mut budgets: BTreeMap<u64, Vec<Entry>> = BTreeMap::new();
        for e in group {
            budgets.entry(e.pair.memory_bits).or_default().push(e);
        }
        for (memory, candidates) in budgets {
            let pick = argmin_by(&candidates, &cmp);
            out.push((seed, memory, candidates[pick].pair.pair_id.clone()));
        }
    }
    Ok(out)
}

/// Oracle gaps for a precision baseline, computed over the same
/// multi-candidate budgets as [`budget_selection`].
pub fn precision_baseline_gaps(
    measures: &[MeasureRecord],
    instabilities: &[InstabilityRecord],
    reference_measure: MeasureName,
    mode: PrecisionMode,
) -> Result<BudgetSelection> {
    let entries = join_tables(measures, instabilities, reference_measure)?;
    let cmp = baseline_cmp(mode);
    budget_selection_by(entries, move |candidates| argmin_by(candidates, &cmp))
}
