//! SVG line plots of metric-versus-SNR curves, computed from metrics CSV
//! files only.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use plotters::prelude::*;

use lpcft::metrics::{ExperimentReport, SnrSummary};

use crate::records::read_metrics;

/// The three figures emitted per sweep.
pub const METRICS: [(&str, &str); 3] = [("cd", "Chamfer distance (m^2)"), ("d1_psnr", "D1-PSNR (dB)"), ("d2_psnr", "D2-PSNR (dB)")];

fn value(s: &SnrSummary, metric: &str) -> f64 {
    match metric {
        "cd" => s.mean_cd,
        "d1_psnr" => s.mean_d1_psnr,
        _ => s.mean_d2_psnr,
    }
}

fn series(reports: &[ExperimentReport], metric: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    reports
        .iter()
        .map(|r| {
            let mut pts: Vec<(f64, f64)> = r
                .summary()
                .iter()
                .filter(|s| s.snr_db.is_finite())
                .map(|s| (s.snr_db, value(s, metric)))
                .filter(|(_, v)| v.is_finite())
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (r.label.clone(), pts)
        })
        .collect()
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if lo == hi {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn draw(path: &Path, title: &str, data: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let xs = data.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
    let ys = data.iter().flat_map(|(_, p)| p.iter().map(|q| q.1));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (x0, x1) = if x0.is_finite() { padded(x0, x1) } else { (0.0, 1.0) };
    let (y0, y1) = if y0.is_finite() { padded(y0, y1) } else { (0.0, 1.0) };

    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    let err = |e: &dyn std::fmt::Display| anyhow!("plotting {}: {e}", path.display());
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc("SNR (dB)")
        .y_desc(title)
        .draw()
        .map_err(|e| err(&e))?;
    for (i, (label, pts)) in data.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| err(&e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Writes `<prefix><metric>.svg` for every metric; one curve per label
/// across all input files.
pub fn plot_csvs(csvs: &[PathBuf], out_dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut reports = Vec::new();
    for c in csvs {
        reports.extend(read_metrics(c)?);
    }
    let mut written = Vec::new();
    for (metric, title) in METRICS {
        let path = out_dir.join(format!("{prefix}{metric}.svg"));
        draw(&path, title, &series(&reports, metric))?;
        written.push(path);
    }
    Ok(written)
}
