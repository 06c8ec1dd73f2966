use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetricsRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::fmt::format_exact;
use crate::model::ModelConfig;

/// CSV with header `step_frac,loss,accuracy,seconds`.
pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step_frac,loss,accuracy,seconds")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{:.3}",
            r.step_frac,
            format_exact(r.loss),
            format_exact(r.accuracy),
            r.seconds
        )?;
    }
    Ok(())
}

/// One line of the JSON-lines run log: everything needed to rerun.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub dataset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: Vec<MetricsRecord>,
    pub unix_time: u64,
}

pub fn append_run_log(path: impl AsRef<Path>, entry: &RunLogEntry) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(entry).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Mean and sample standard deviation across seeds at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub step_frac: f64,
    pub runs: usize,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Aggregate per-seed metric lists checkpoint by checkpoint.
pub fn summarize(runs: &[Vec<MetricsRecord>]) -> Result<Vec<MetricsSummary>> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Contract("no runs to summarize".into()))?;
    let mut out = Vec::with_capacity(first.len());
    for (i, rec) in first.iter().enumerate() {
        let mut losses = Vec::with_capacity(runs.len());
        let mut accs = Vec::with_capacity(runs.len());
        for run in runs {
            let r = run.get(i).filter(|r| r.step_frac == rec.step_frac).ok_or_else(|| {
                Error::Contract(format!("runs disagree on checkpoint {i} ({})", rec.step_frac))
            })?;
            losses.push(r.loss);
            accs.push(r.accuracy);
        }
        let (loss_mean, loss_std) = mean_std(&losses);
        let (accuracy_mean, accuracy_std) = mean_std(&accs);
        out.push(MetricsSummary {
            step_frac: rec.step_frac,
            runs: runs.len(),
            loss_mean,
            loss_std,
            accuracy_mean,
            accuracy_std,
        });
    }
    Ok(out)
}
