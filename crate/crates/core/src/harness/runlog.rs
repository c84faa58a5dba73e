//! Per-generation training log in CSV form.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub generation: u64,
    pub evaluations: u64,
    /// Best fitness seen so far in the run.
    pub best_fitness: f64,
    pub generation_best: f64,
    pub mean_fitness: f64,
    pub valid_fraction: f64,
    pub sigma: f64,
    pub emitter: usize,
    pub restarted: bool,
    pub archive_size: usize,
    pub qd_score: f64,
    pub cells_filled_pct: f64,
    pub wall_time_s: f64,
}

impl LogRow {
    /// Equality ignoring wall-clock time.
    pub fn same_progress(&self, other: &LogRow) -> bool {
        LogRow {
            wall_time_s: 0.0,
            ..self.clone()
        } == LogRow {
            wall_time_s: 0.0,
            ..other.clone()
        }
    }
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let file = File::create(path).context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().context(|| format!("writing {}", path.display()))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let file = File::open(path).context(|| format!("opening {}", path.display()))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Into::into))
        .collect()
}

/// Appends rows to an existing log, writing a header only for a new file.
pub struct LogWriter {
    inner: csv::Writer<File>,
}

impl LogWriter {
    pub fn create(path: &Path, existing: &[LogRow]) -> Result<Self> {
        write_log(path, existing)?;
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .context(|| format!("opening {}", path.display()))?;
        let inner = csv::WriterBuilder::new()
            .has_headers(existing.is_empty())
            .from_writer(file);
        Ok(Self { inner })
    }

    pub fn push(&mut self, row: &LogRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush().context(|| "flushing training log".to_string())
    }
}
