//! Scene pairs on disk: `clouds/<frame_id>.ply` plus `index.csv`.
//!
//! Index columns: `frame_id, tx, rx, separation` followed by `m00..m33`, the
//! row-major transmitter-to-receiver transform. Paths are relative to the
//! dataset directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lpcft::pcdata::{load_point_cloud, pose_from_matrix, pose_to_matrix, save_point_cloud, CloudFormat, ScenePair};

pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    frame_id: String,
    tx: String,
    rx: String,
    separation: f64,
    m00: f64,
    m01: f64,
    m02: f64,
    m03: f64,
    m10: f64,
    m11: f64,
    m12: f64,
    m13: f64,
    m20: f64,
    m21: f64,
    m22: f64,
    m23: f64,
    m30: f64,
    m31: f64,
    m32: f64,
    m33: f64,
}

impl IndexRow {
    fn matrix(&self) -> [[f64; 4]; 4] {
        [
            [self.m00, self.m01, self.m02, self.m03],
            [self.m10, self.m11, self.m12, self.m13],
            [self.m20, self.m21, self.m22, self.m23],
            [self.m30, self.m31, self.m32, self.m33],
        ]
    }
}

/// Writes every pair and the index; returns the index path.
pub fn save_dataset(dir: &Path, pairs: &[ScenePair]) -> Result<PathBuf> {
    let clouds = dir.join("clouds");
    std::fs::create_dir_all(&clouds)?;
    let index = dir.join(INDEX_FILE);
    let mut w = csv::Writer::from_path(&index)?;
    for (i, p) in pairs.iter().enumerate() {
        let id = if p.tx.frame_id.is_empty() { format!("frame{i:06}") } else { p.tx.frame_id.trim_end_matches("_tx").to_string() };
        let tx = format!("clouds/{id}_tx.ply");
        let rx = format!("clouds/{id}_rx.ply");
        save_point_cloud(dir.join(&tx), &p.tx, CloudFormat::PlyBinaryLe, &[])?;
        save_point_cloud(dir.join(&rx), &p.rx, CloudFormat::PlyBinaryLe, &[])?;
        let m = pose_to_matrix(&p.tx_to_rx);
        w.serialize(IndexRow {
            frame_id: id,
            tx,
            rx,
            separation: p.separation,
            m00: m[0][0],
            m01: m[0][1],
            m02: m[0][2],
            m03: m[0][3],
            m10: m[1][0],
            m11: m[1][1],
            m12: m[1][2],
            m13: m[1][3],
            m20: m[2][0],
            m21: m[2][1],
            m22: m[2][2],
            m23: m[2][3],
            m30: m[3][0],
            m31: m[3][1],
            m32: m[3][2],
            m33: m[3][3],
        })?;
    }
    w.flush()?;
    Ok(index)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<ScenePair>> {
    let index = dir.join(INDEX_FILE);
    let mut r = csv::Reader::from_path(&index).with_context(|| format!("reading dataset index {}", index.display()))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: IndexRow = row?;
        let load = |rel: &str| {
            let path = dir.join(rel);
            load_point_cloud(&path, CloudFormat::PlyBinaryLe).with_context(|| format!("loading {}", path.display()))
        };
        out.push(ScenePair {
            tx: load(&row.tx)?,
            rx: load(&row.rx)?,
            tx_to_rx: pose_from_matrix(&row.matrix())?,
            separation: row.separation,
        });
    }
    if out.is_empty() {
        bail!("dataset {} has no scene pairs", dir.display());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lpcft::pcdata::{synth_dataset, SceneParams};

    #[test]
    fn roundtrip_keeps_geometry_at_f32_precision() {
        let params = SceneParams {
            n_points: 128,
            beams: 8,
            azimuth_steps: 90,
            ..SceneParams::default()
        };
        let pairs = synth_dataset(3, 2, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &pairs).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(b.tx.frame_id, a.tx.frame_id);
            assert_eq!(a.tx.len(), b.tx.len());
            for (p, q) in a.tx.points().iter().zip(b.tx.points()) {
                for k in 0..3 {
                    assert_eq!(p[k] as f32 as f64, q[k]);
                }
            }
            let d = (a.tx_to_rx.to_homogeneous() - b.tx_to_rx.to_homogeneous()).abs().max();
            assert!(d < 1e-12);
        }
    }
}
