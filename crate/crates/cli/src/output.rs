//! CSV and JSON artifacts.
//!
//! Floats are written in shortest round-trip decimal form, so a value read
//! back from any artifact is bit-identical to the one computed.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// One line of the main results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub experiment: String,
    pub algorithm: String,
    pub gamma: f64,
    pub stepsize_tag: String,
    pub trials: usize,
    pub samples: u64,
    pub mean_err_pi_sq: f64,
    pub stderr: f64,
    pub lower_bound: f64,
    pub slope_fit: Option<f64>,
}

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "algorithm",
    "gamma",
    "stepsize_tag",
    "trials",
    "samples",
    "mean_err_pi_sq",
    "stderr",
    "lower_bound",
    "slope_fit",
];

/// Writes rows as soon as they are complete and flushes after every batch,
/// so an interrupted run leaves every finished row on disk.
pub struct RowSink<T: Serialize> {
    path: PathBuf,
    writer: csv::Writer<File>,
    rows: Vec<T>,
}

impl<T: Serialize + Clone> RowSink<T> {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(Self {
            path,
            writer: csv::Writer::from_writer(file),
            rows: Vec::new(),
        })
    }

    pub fn push_all(&mut self, rows: &[T]) -> Result<()> {
        for row in rows {
            self.writer.serialize(row)?;
        }
        self.writer
            .flush()
            .map_err(|e| HarnessError::io(&self.path, e))?;
        self.rows.extend_from_slice(rows);
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn finish(mut self) -> Result<Vec<T>> {
        self.writer
            .flush()
            .map_err(|e| HarnessError::io(&self.path, e))?;
        Ok(self.rows)
    }
}

/// Reads a results table back.
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(HarnessError::from))
        .collect()
}

/// Run summary written next to the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub workers: usize,
    /// Fitted log-log slope of mean error against `1/(1-gamma)`, per
    /// algorithm and stepsize variant.
    pub slopes: BTreeMap<String, f64>,
    /// Wall-clock seconds per stage.
    pub runtimes_sec: BTreeMap<String, f64>,
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
    /// Experiment-specific findings.
    pub details: serde_json::Value,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let row = CsvRow {
            experiment: "x".into(),
            algorithm: "vrtd".into(),
            gamma: 0.93,
            stepsize_tag: "tuned".into(),
            trials: 3,
            samples: 1021,
            mean_err_pi_sq: 0.1 + 0.2,
            stderr: 1.0 / 3.0,
            lower_bound: 6.02e-23,
            slope_fit: None,
        };
        let mut sink = RowSink::create(&path).unwrap();
        sink.push_all(std::slice::from_ref(&row)).unwrap();
        sink.finish().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        let back: Vec<CsvRow> = read_rows(&path).unwrap();
        assert_eq!(back, vec![row]);
    }
}
