//! `metrics.csv` writer. Floats are written with `Display`, which is the
//! shortest round-trip form, so identical runs give identical files.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use disentangle_core::MetricsRow;

use crate::error::{AppError, Result};

pub const METRICS_HEADER: [&str; 8] = ["step", "l_r", "l_exp", "l_adv_exp", "l_adv_en", "l_final", "acc_c_exp", "acc_c_adv"];

pub struct MetricsWriter {
    out: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    /// Creates (truncating) the file and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| AppError::io(format!("creating {}", path.display()), e))?;
        let mut out = csv::Writer::from_writer(BufWriter::new(file));
        out.write_record(METRICS_HEADER)?;
        out.flush().map_err(|e| AppError::io("flushing metrics", e))?;
        Ok(Self { out })
    }

    /// Opens an existing file for appending, keeping only rows up to `step`.
    /// Used when resuming so the file matches an uninterrupted run.
    pub fn resume(path: &Path, step: u64) -> Result<Self> {
        let mut kept = Vec::new();
        if path.exists() {
            let mut reader = csv::Reader::from_path(path)?;
            for record in reader.records() {
                let record = record?;
                let row_step: u64 = record
                    .get(0)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| AppError::Config(format!("{}: malformed step column", path.display())))?;
                if row_step <= step {
                    kept.push(record);
                }
            }
        }
        let mut writer = Self::create(path)?;
        for record in &kept {
            writer.out.write_record(record)?;
        }
        writer.out.flush().map_err(|e| AppError::io("flushing metrics", e))?;
        Ok(writer)
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        let r = &row.report;
        self.out.write_record([
            row.step.to_string(),
            r.l_r.to_string(),
            r.l_exp.to_string(),
            r.l_adv_exp.to_string(),
            r.l_adv_en.to_string(),
            r.l_final.to_string(),
            row.acc_c_exp.to_string(),
            row.acc_c_adv.to_string(),
        ])?;
        self.out.flush().map_err(|e| AppError::io("flushing metrics", e))
    }
}

/// Reads back a metrics file, e.g. for plotting.
pub fn read_metrics(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| AppError::Config(format!("{}: non-numeric field {f:?}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}
