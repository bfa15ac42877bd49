use super::{mean_median, MetricRecord};

/// Aggregate of all frames evaluated at one SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrSummary {
    pub snr_db: f64,
    pub frames: usize,
    pub failures: usize,
    pub bpp: f64,
    pub mean_cd: f64,
    pub median_cd: f64,
    pub mean_d1_psnr: f64,
    pub mean_d2_psnr: f64,
}

/// Per-frame records of one sweep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentReport {
    pub label: String,
    pub records: Vec<MetricRecord>,
}

impl ExperimentReport {
    pub fn new(label: impl Into<String>) -> Self {
        ExperimentReport {
            label: label.into(),
            records: Vec::new(),
        }
    }

    /// SNR values in order of first appearance.
    pub fn snrs(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.records {
            if !out.iter().any(|s| s.to_bits() == r.snr_db.to_bits()) {
                out.push(r.snr_db);
            }
        }
        out
    }

    pub fn at(&self, snr_db: f64) -> Option<SnrSummary> {
        let rows: Vec<&MetricRecord> = self
            .records
            .iter()
            .filter(|r| r.snr_db.to_bits() == snr_db.to_bits())
            .collect();
        if rows.is_empty() {
            return None;
        }
        let col = |f: fn(&MetricRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
        let (mean_cd, median_cd) = mean_median(&col(|r| r.cd));
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        Some(SnrSummary {
            snr_db,
            frames: rows.len(),
            failures: rows.iter().filter(|r| r.failed).count(),
            bpp: mean(col(|r| r.bpp)),
            mean_cd,
            median_cd,
            mean_d1_psnr: mean(col(|r| r.d1_psnr)),
            mean_d2_psnr: mean(col(|r| r.d2_psnr)),
        })
    }

    pub fn summary(&self) -> Vec<SnrSummary> {
        self.snrs().into_iter().filter_map(|s| self.at(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(snr: f64, cd: f64, failed: bool) -> MetricRecord {
        MetricRecord {
            frame_id: String::new(),
            snr_db: snr,
            bpp: 1.0,
            cd,
            d1_psnr: 10.0,
            d2_psnr: 12.0,
            failed,
        }
    }

    #[test]
    fn groups_by_snr() {
        let r = ExperimentReport {
            label: "x".into(),
            records: vec![rec(5.0, 1.0, false), rec(0.0, 9.0, true), rec(5.0, 3.0, false), rec(5.0, 20.0, true)],
        };
        assert_eq!(r.snrs(), vec![5.0, 0.0]);
        let s = r.at(5.0).unwrap();
        assert_eq!((s.frames, s.failures), (3, 1));
        assert_eq!((s.mean_cd, s.median_cd), (8.0, 3.0));
        assert_eq!(r.summary().len(), 2);
        assert!(r.at(10.0).is_none());
    }
}
