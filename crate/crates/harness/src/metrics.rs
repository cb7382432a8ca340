//! Per-run JSON Lines records and the CSV summary derived from them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// One line of a metrics file. Absent values serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    /// Mean loss over the full training set before this step's update.
    pub train_loss: Option<f64>,
    /// Norm of the full training-set gradient at the same parameters.
    pub grad_norm: Option<f64>,
    /// Wall-clock time of the optimizer update; `null` when timing is off.
    pub step_time_ns: Option<u64>,
    /// `‖UᵀU − I‖_F` of the Ginger basis.
    pub ortho_residual: Option<f64>,
    /// Largest `γ K_i` of the Ginger state.
    pub max_k_gamma: Option<f64>,
    pub optimizer: String,
    pub seed: u64,
    /// Set only on the diagnostic record written before an abort.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<String>,
}

pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(HarnessError::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &MetricRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n").map_err(HarnessError::io(&self.path))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(HarnessError::io(&self.path))
    }
}

pub fn read_records(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub optimizer: String,
    pub seed: u64,
    pub learning_rate: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: usize,
    pub momentum_coef: f64,
    pub records: usize,
    pub min_loss: Option<f64>,
    pub final_grad_norm: Option<f64>,
    pub mean_step_time_ns: Option<f64>,
    /// Analytic per-step estimate `12dτ + (τ+1)³`, Ginger only.
    pub flops_per_step: Option<f64>,
    pub status: String,
}

/// Summary statistics computed from logged records only.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Derived {
    pub min_loss: Option<f64>,
    pub final_grad_norm: Option<f64>,
    pub mean_step_time_ns: Option<f64>,
}

pub fn derive(records: &[MetricRecord]) -> Derived {
    let min_loss = records
        .iter()
        .filter_map(|r| r.train_loss)
        .filter(|x| x.is_finite())
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x))));
    let final_grad_norm = records.iter().rev().find_map(|r| r.grad_norm.filter(|g| g.is_finite()));
    let times: Vec<u64> = records.iter().filter_map(|r| r.step_time_ns).collect();
    let mean_step_time_ns = (!times.is_empty()).then(|| times.iter().map(|&t| t as f64).sum::<f64>() / times.len() as f64);
    Derived {
        min_loss,
        final_grad_norm,
        mean_step_time_ns,
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(HarnessError::io(path))
}
