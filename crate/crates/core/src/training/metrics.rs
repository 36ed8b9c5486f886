use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

pub const METRICS_HEADER: &str =
    "iter,alpha_s_0,alpha_s_1,alpha_s_2,loss_c_raw,loss_s0_raw,loss_s1_raw,loss_s2_raw,\
loss_c_norm,loss_s0_norm,loss_s1_norm,loss_s2_norm,total";

/// Everything measured in one training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iter: u64,
    pub alpha_s: Vec<f64>,
    /// Content layer first, then style layers.
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub total: f64,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let mut fields = vec![self.iter.to_string()];
        fields.extend(
            self.alpha_s
                .iter()
                .chain(&self.raw)
                .chain(&self.normalized)
                .map(|v| v.to_string()),
        );
        fields.push(self.total.to_string());
        fields.join(",")
    }
}

/// Append-only CSV; the header is written only to a new or empty file.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let empty = file.metadata()?.len() == 0;
        let mut out = BufWriter::new(file);
        if empty {
            writeln!(out, "{METRICS_HEADER}")?;
        }
        Ok(Self { out })
    }

    pub fn append(&mut self, record: &StepRecord) -> Result<()> {
        writeln!(self.out, "{}", record.csv_row())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
