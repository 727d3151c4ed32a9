//! Metric records and their CSV form.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "step,pass,seconds,heldout_ll,k_effective";

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    /// Minibatches processed.
    pub step: u64,
    /// Passes over the training data consumed.
    pub pass: f64,
    /// Training wall-clock time, excluding evaluation.
    pub seconds: f64,
    /// Held-out per-time-step log-likelihood.
    pub heldout_ll: f64,
    pub k_effective: usize,
}

impl MetricRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{},{}",
            self.step, self.pass, self.seconds, self.heldout_ll, self.k_effective
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::InvalidArgument(format!("malformed metrics row `{line}`"));
        if fields.len() != 5 {
            return Err(bad());
        }
        Ok(MetricRecord {
            step: fields[0].parse().map_err(|_| bad())?,
            pass: fields[1].parse().map_err(|_| bad())?,
            seconds: fields[2].parse().map_err(|_| bad())?,
            heldout_ll: fields[3].parse().map_err(|_| bad())?,
            k_effective: fields[4].parse().map_err(|_| bad())?,
        })
    }
}

/// Append-only CSV sink; writes the header when the file is new or empty.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    /// Starts a fresh file, replacing any previous contents.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = MetricsWriter { path, file };
        w.write_line(CSV_HEADER)?;
        Ok(w)
    }

    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(&path, e))?.len() == 0;
        let mut w = MetricsWriter { path, file };
        if empty {
            w.write_line(CSV_HEADER)?;
        }
        Ok(w)
    }

    pub fn write(&mut self, record: &MetricRecord) -> Result<()> {
        self.write_line(&record.to_csv_row())
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a metrics file, checking the header.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h == CSV_HEADER => {}
        Some(Err(e)) => return Err(Error::io(path, e)),
        _ => return Err(Error::InvalidArgument(format!("{}: missing metrics header", path.display()))),
    }
    lines
        .map(|l| l.map_err(|e| Error::io(path, e)).and_then(|l| MetricRecord::parse_csv_row(&l)))
        .collect()
}
