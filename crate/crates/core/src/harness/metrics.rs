use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Progress of one run at the end of an epoch. Serialized as one JSON
/// object per line, fields in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Configuration label, e.g. `fE` or `baseline(FP32)`.
    pub label: String,
    pub seed: u64,
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    /// Fraction of the test split classified correctly, in `[0, 1]`.
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

/// Appends records to a JSON-lines file.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn append(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<(), HarnessError> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| HarnessError::Metrics(e.to_string()))?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parses JSON-lines records; blank lines are skipped.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| HarnessError::Metrics(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>, HarnessError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Metrics(format!("{}: {e}", path.display())))?;
    parse_metrics(&text)
}
