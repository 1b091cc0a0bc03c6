//! Per-round CSV output and the JSON run record.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::federation::RoundMetrics;

use super::ExperimentConfig;

pub const METRICS_HEADER: &str = "round,alpha,mean_train_loss,top1_accuracy,participants";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_RECORD_FILE: &str = "run.json";

/// One CSV line (no trailing newline) for `m`.
pub fn metrics_row(m: &RoundMetrics) -> String {
    format!(
        "{},{},{},{},{}",
        m.round,
        m.alpha,
        m.mean_train_loss,
        m.top1_accuracy,
        m.participants.len()
    )
}

/// Appends one row per round and flushes, so a partial run leaves a valid file.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = MetricsWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(METRICS_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(format!("writing {}", self.path.display()), e))
    }

    pub fn append(&mut self, m: &RoundMetrics) -> Result<()> {
        self.line(&metrics_row(m))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivedSeeds {
    pub data: u64,
    pub split: u64,
    pub partition: u64,
    pub init: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalSummary {
    pub rounds_completed: usize,
    pub top1_accuracy: f64,
    /// Across client models for SOLO; zero otherwise.
    pub top1_std: f64,
}

/// Sidecar describing a run: resolved config, derived seeds, and (once
/// finished) the final accuracy.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub seeds: DerivedSeeds,
    pub client_sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<FinalSummary>,
}

impl RunRecord {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("run record serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}
