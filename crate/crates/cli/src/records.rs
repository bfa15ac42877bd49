//! CSV and JSON schemas of run outputs.
//!
//! `metrics.csv`: `label, frame_id, snr_db, bpp, cd, d1_psnr, d2_psnr,
//! failed`, one row per (SNR, frame); the noise-free roundtrip has
//! `snr_db = inf`. `train_log.csv`: `epoch, mean_loss, mean_cd, lr`.
//! `summary.json`: per label and SNR, frame and failure counts with mean and
//! median CD and mean PSNRs.

use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use lpcft::metrics::{ExperimentReport, MetricRecord, SnrSummary};
use lpcft::trainer::EpochLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub frame_id: String,
    pub snr_db: f64,
    pub bpp: f64,
    pub cd: f64,
    pub d1_psnr: f64,
    pub d2_psnr: f64,
    pub failed: bool,
}

pub fn write_metrics(path: &Path, reports: &[&ExperimentReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rep in reports {
        for r in &rep.records {
            w.serialize(MetricRow {
                label: rep.label.clone(),
                frame_id: r.frame_id.clone(),
                snr_db: r.snr_db,
                bpp: r.bpp,
                cd: r.cd,
                d1_psnr: r.d1_psnr,
                d2_psnr: r.d2_psnr,
                failed: r.failed,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reports in order of first appearance of their label.
pub fn read_metrics(path: &Path) -> Result<Vec<ExperimentReport>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<ExperimentReport> = Vec::new();
    for row in r.deserialize() {
        let row: MetricRow = row?;
        let rec = MetricRecord {
            frame_id: row.frame_id,
            snr_db: row.snr_db,
            bpp: row.bpp,
            cd: row.cd,
            d1_psnr: row.d1_psnr,
            d2_psnr: row.d2_psnr,
            failed: row.failed,
        };
        match out.iter_mut().find(|rep| rep.label == row.label) {
            Some(rep) => rep.records.push(rec),
            None => out.push(ExperimentReport {
                label: row.label,
                records: vec![rec],
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct LogRow {
    epoch: usize,
    mean_loss: f64,
    mean_cd: f64,
    lr: f64,
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in log {
        w.serialize(LogRow {
            epoch: l.epoch,
            mean_loss: l.mean_loss,
            mean_cd: l.mean_cd,
            lr: l.lr,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| {
            let l: LogRow = row?;
            Ok(EpochLog {
                epoch: l.epoch,
                mean_loss: l.mean_loss,
                mean_cd: l.mean_cd,
                lr: l.lr,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    snr_db: f64,
    frames: usize,
    failures: usize,
    bpp: f64,
    mean_cd: f64,
    median_cd: f64,
    mean_d1_psnr: f64,
    mean_d2_psnr: f64,
}

impl From<&SnrSummary> for SummaryRow {
    fn from(s: &SnrSummary) -> Self {
        SummaryRow {
            snr_db: s.snr_db,
            frames: s.frames,
            failures: s.failures,
            bpp: s.bpp,
            mean_cd: s.mean_cd,
            median_cd: s.median_cd,
            mean_d1_psnr: s.mean_d1_psnr,
            mean_d2_psnr: s.mean_d2_psnr,
        }
    }
}

#[derive(Debug, Serialize)]
struct LabelSummary {
    label: String,
    per_snr: Vec<SummaryRow>,
}

/// Non-finite numbers (noise-free SNR, lossless PSNR) are written as `null`.
pub fn write_summary(path: &Path, reports: &[&ExperimentReport]) -> Result<()> {
    let all: Vec<LabelSummary> = reports
        .iter()
        .map(|r| LabelSummary {
            label: r.label.clone(),
            per_snr: r.summary().iter().map(SummaryRow::from).collect(),
        })
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&all)? + "\n")?;
    Ok(())
}
