//! CSV serialization for the tabular backbone: pairs, measures, instability,
//! plus the selection, correlation, and trend output tables.

use std::fs::File;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::downstream::InstabilityRecord;
use crate::error::{Error, Result};
use crate::measures::MeasureRecord;
use crate::selection::{PairRecord, SelectionOutcome};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::InvalidRecord(format!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.map_err(|e| Error::InvalidRecord(format!("{}: {e}", path.display())))?);
    }
    Ok(rows)
}

pub fn write_measures_csv(path: impl AsRef<Path>, rows: &[MeasureRecord]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn read_measures_csv(path: impl AsRef<Path>) -> Result<Vec<MeasureRecord>> {
    read_rows(path.as_ref())
}

pub fn write_instability_csv(path: impl AsRef<Path>, rows: &[InstabilityRecord]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn read_instability_csv(path: impl AsRef<Path>) -> Result<Vec<InstabilityRecord>> {
    read_rows(path.as_ref())
}

pub fn write_pairs_csv(path: impl AsRef<Path>, rows: &[PairRecord]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn read_pairs_csv(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let rows: Vec<PairRecord> = read_rows(path.as_ref())?;
    for row in &rows {
        row.validate()?;
    }
    Ok(rows)
}

pub fn write_selection_csv(path: impl AsRef<Path>, rows: &[SelectionOutcome]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

/// One Spearman correlation between a measure and the downstream
/// disagreement for one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub task: String,
    pub measure_name: String,
    pub spearman: f64,
}

pub fn write_correlations_csv(path: impl AsRef<Path>, rows: &[CorrelationRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

pub fn read_correlations_csv(path: impl AsRef<Path>) -> Result<Vec<CorrelationRow>> {
    read_rows(path.as_ref())
}

/// Plot-ready trend row: observed disagreement and fitted value at one
/// memory point, with the shared slope and the task intercept repeated for
/// convenience.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendRow {
    pub task: String,
    pub memory_bits: f64,
    pub disagreement_pct: f64,
    pub fitted_pct: f64,
    pub slope: f64,
    pub intercept: f64,
}

pub fn write_trend_csv(path: impl AsRef<Path>, rows: &[TrendRow]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}
