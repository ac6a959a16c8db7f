//! Statistical layer: Spearman rank correlation with midrank tie handling,
//! a seeded permutation test, and the shared-slope linear-log trend fits
//! relating downstream instability to memory, dimension, or precision.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average-rank (midrank) assignment.
fn midranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn check_inputs(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidConfig(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateCorrelation("need at least two points".into()));
    }
    if xs.iter().any(|v| !v.is_finite()) || ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("non-finite value".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(xs) || constant(ys) {
        return Err(Error::DegenerateCorrelation("an input is constant".into()));
    }
    Ok(())
}

/// Spearman rank correlation in [-1, 1] with midrank tie handling.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_inputs(xs, ys)?;
    Ok(pearson(&midranks(xs), &midranks(ys)).clamp(-1.0, 1.0))
}

/// One-sided p-values from a seeded permutation test of the Spearman
/// correlation: `p_le` is evidence for negative association, `p_ge` for
/// positive, each with the +1 correction for the observed statistic.
#[derive(Debug, Clone, Copy)]
pub struct PermutationTest {
    pub rho: f64,
    pub p_le: f64,
    pub p_ge: f64,
    pub permutations: usize,
}

pub fn spearman_permutation_test(
    xs: &[f64],
    ys: &[f64],
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    if permutations == 0 {
        return Err(Error::InvalidConfig("need at least one permutation".into()));
    }
    let rho = spearman(xs, ys)?;
    let rank_x = midranks(xs);
    let mut rank_y = midranks(ys);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut at_most = 0usize;
    let mut at_least = 0usize;
    for _ in 0..permutations {
        rank_y.shuffle(&mut rng);
        let r = pearson(&rank_x, &rank_y);
        at_most += usize::from(r <= rho);
        at_least += usize::from(r >= rho);
    }
    let denom = (permutations + 1) as f64;
    Ok(PermutationTest {
        rho,
        p_le: (at_most + 1) as f64 / denom,
        p_ge: (at_least + 1) as f64 / denom,
        permutations,
    })
}

/// Which variable the trend was fit against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FittedVariable {
    #[serde(rename = "memory")]
    Memory,
    #[serde(rename = "dimension")]
    Dimension,
    #[serde(rename = "precision")]
    Precision,
}

impl FittedVariable {
    pub fn as_str(&self) -> &'static str {
        match self {
            FittedVariable::Memory => "memory",
            FittedVariable::Dimension => "dimension",
            FittedVariable::Precision => "precision",
        }
    }
}

/// Shared-slope linear-log fit: disagreement ~ intercept(group) -
/// slope * log2(variable). The slope is stored as the reduction in
/// percentage points per doubling (positive when instability falls).
#[derive(Debug, Clone)]
pub struct TrendFit {
    pub slope: f64,
    pub intercepts: BTreeMap<String, f64>,
    pub fitted_variable: FittedVariable,
}

impl TrendFit {
    pub fn predict(&self, group: &str, variable: f64) -> Option<f64> {
        self.intercepts
            .get(group)
            .map(|c| c - self.slope * variable.log2())
    }
}

/// One observation for the memory trend.
#[derive(Debug, Clone)]
pub struct TrendRecord {
    pub task: String,
    pub memory_bits: f64,
    pub disagreement_pct: f64,
}

/// One observation for the per-factor trends.
#[derive(Debug, Clone)]
pub struct FactorRecord {
    pub task: String,
    pub dimension: f64,
    pub precision: f64,
    pub disagreement_pct: f64,
}

/// Solve the least-squares problem for rows (log2(variable), group) with one
/// shared slope column and one indicator column per group, via the normal
/// equations.
fn shared_slope_fit(
    rows: &[(f64, String, f64)],
    fitted_variable: FittedVariable,
) -> Result<TrendFit> {
    let groups: BTreeMap<String, usize> = {
        let mut names: Vec<&String> = rows.iter().map(|(_, g, _)| g).collect();
        names.sort();
        names.dedup();
        names
            .into_iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i))
            .collect()
    };
    let cols = groups.len() + 1;
    if rows.len() < cols {
        return Err(Error::RankDeficient(format!(
            "{} observations cannot determine {cols} coefficients",
            rows.len()
        )));
    }
    let mut design = DMatrix::<f64>::zeros(rows.len(), cols);
    let mut target = DVector::<f64>::zeros(rows.len());
    for (r, (log_var, group, y)) in rows.iter().enumerate() {
        design[(r, 0)] = *log_var;
        design[(r, 1 + groups[group])] = 1.0;
        target[r] = *y;
    }
    let sv = design
        .clone()
        .try_svd(false, false, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::RankDeficient("singular values did not converge".into()))?
        .singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smax <= 0.0 || smin < 1e-10 * smax {
        return Err(Error::RankDeficient(
            "design matrix is rank deficient".into(),
        ));
    }
    let gram = design.transpose() * &design;
    let beta = gram
        .lu()
        .solve(&(design.transpose() * target))
        .ok_or_else(|| Error::RankDeficient("normal equations are singular".into()))?;

    let mut intercepts = BTreeMap::new();
    for (name, idx) in &groups {
        intercepts.insert(name.clone(), beta[1 + idx]);
    }
    Ok(TrendFit {
        slope: -beta[0],
        intercepts,
        fitted_variable,
    })
}

/// Fit the stability-memory trend with one intercept per task, excluding
/// records at or above the memory cutoff (bits per word).
pub fn fit_linear_log(records: &[TrendRecord], cutoff: f64) -> Result<TrendFit> {
    let rows: Vec<(f64, String, f64)> = records
        .iter()
        .filter(|r| r.memory_bits < cutoff)
        .map(|r| (r.memory_bits.log2(), r.task.clone(), r.disagreement_pct))
        .collect();
    if rows.is_empty() {
        return Err(Error::MissingRecords(format!(
            "no records below the {cutoff} bits/word cutoff"
        )));
    }
    let mut per_task: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (log_m, task, _) in &rows {
        per_task.entry(task).or_default().push(*log_m);
    }
    for (task, mut memories) in per_task {
        memories.sort_by(|a, b| a.partial_cmp(b).unwrap());
        memories.dedup();
        if memories.len() < 2 {
            return Err(Error::RankDeficient(format!(
                "task {task:?} has fewer than two distinct memory values"
            )));
        }
    }
    shared_slope_fit(&rows, FittedVariable::Memory)
}

/// Fit the per-factor trend: log2(dimension) (resp. precision) with one
/// intercept per (task, other-factor) combination.
pub fn fit_factor_trend(records: &[FactorRecord], factor: FittedVariable) -> Result<TrendFit> {
    let rows: Vec<(f64, String, f64)> = records
        .iter()
        .map(|r| {
            let (var, other_name, other) = match factor {
                FittedVariable::Dimension => (r.dimension, "precision", r.precision),
                FittedVariable::Precision => (r.precision, "dimension", r.dimension),
                FittedVariable::Memory => (r.dimension * r.precision, "", 0.0),
            };
            let group = if other_name.is_empty() {
                r.task.clone()
            } else {
                format!("{}|{}={}", r.task, other_name, other)
            };
            (var.log2(), group, r.disagreement_pct)
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::MissingRecords("no factor records".into()));
    }
    shared_slope_fit(&rows, factor)
}

/// The fitted per-doubling reduction expressed relative to a disagreement
/// level, as a percentage.
pub fn relative_reduction(fit: &TrendFit, disagreement_pct: f64) -> Result<f64> {
    if disagreement_pct <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "disagreement must be positive, got {disagreement_pct}"
        )));
    }
    Ok(100.0 * fit.slope / disagreement_pct)
}
