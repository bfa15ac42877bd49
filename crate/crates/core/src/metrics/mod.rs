//! Reconstruction quality metrics and rate accounting. The differentiable
//! training losses live in [`loss`].

pub mod loss;
mod report;
pub use report::{ExperimentReport, SnrSummary};

use crate::error::{Error, Result};
use crate::pcdata::{estimate_normals, nearest_indices, Normals, PointCloud};

pub use loss::{
    cardinality_loss, chamfer_loss, density_loss, total_loss, DensityTerms, LossParts, LossWeights,
};

/// Mean squared nearest-neighbor distances `(e_PQ, e_QP)`.
pub fn point_to_point_mse(p: &PointCloud, q: &PointCloud) -> Result<(f64, f64)> {
    Ok((directed_mse(p.points(), q.points())?, directed_mse(q.points(), p.points())?))
}

fn directed_mse(from: &[[f64; 3]], to: &[[f64; 3]]) -> Result<f64> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (_, d2) = nearest_indices(to, from);
    Ok(d2.iter().sum::<f64>() / from.len() as f64)
}

/// Symmetric Chamfer distance in squared meters.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    let (a, b) = point_to_point_mse(p, q)?;
    Ok(a + b)
}

/// `10 log10(3 peak^2 / mse)`; a zero error yields `+inf`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (3.0 * peak * peak / mse).log10()
    }
}

pub fn d1_psnr(p: &PointCloud, q: &PointCloud, peak: f64) -> Result<f64> {
    let (a, b) = point_to_point_mse(p, q)?;
    Ok(psnr_from_mse(a.max(b), peak))
}

/// Which cloud supplies the normals for point-to-plane errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormalSide {
    #[default]
    Reconstruction,
    Reference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct D2Result {
    pub mse_pq: f64,
    pub mse_qp: f64,
    pub psnr: f64,
    /// Points skipped because their normal was degenerate.
    pub excluded: usize,
}

/// Point-to-plane PSNR between reference `p` and reconstruction `q`.
///
/// `normals` belongs to `q` for [`NormalSide::Reconstruction`] and to `p`
/// otherwise. Each direction projects the nearest-neighbor residual onto the
/// normal attached to the chosen side's point of the pair, and the larger of
/// the two errors is reported.
pub fn d2_psnr(
    p: &PointCloud,
    q: &PointCloud,
    normals: &Normals,
    side: NormalSide,
    peak: f64,
) -> Result<D2Result> {
    let owner_len = match side {
        NormalSide::Reconstruction => q.len(),
        NormalSide::Reference => p.len(),
    };
    if normals.normals.len() != owner_len {
        return Err(Error::invalid("normal count does not match the cloud"));
    }
    let (pq, ex1) = plane_mse(p.points(), q.points(), normals, side == NormalSide::Reconstruction)?;
    let (qp, ex2) = plane_mse(q.points(), p.points(), normals, side == NormalSide::Reference)?;
    Ok(D2Result {
        mse_pq: pq,
        mse_qp: qp,
        psnr: psnr_from_mse(pq.max(qp), peak),
        excluded: ex1 + ex2,
    })
}

/// Mean of `((a - b) . n)^2` over `from`, `b` the nearest point of `to`.
/// The normal is taken from the matched `to` point when `normals_on_target`,
/// otherwise from the source point itself.
fn plane_mse(
    from: &[[f64; 3]],
    to: &[[f64; 3]],
    normals: &Normals,
    normals_on_target: bool,
) -> Result<(f64, usize)> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (nn, _) = nearest_indices(to, from);
    let mut sum = 0.0;
    let mut used = 0usize;
    for (i, a) in from.iter().enumerate() {
        let j = nn[i];
        let owner = if normals_on_target { j } else { i };
        if normals.degenerate[owner] {
            continue;
        }
        let n = normals.normals[owner];
        let b = to[j];
        let proj = (a[0] - b[0]) * n[0] + (a[1] - b[1]) * n[1] + (a[2] - b[2]) * n[2];
        sum += proj * proj;
        used += 1;
    }
    let mse = if used == 0 { 0.0 } else { sum / used as f64 };
    Ok((mse, from.len() - used))
}

/// D2-PSNR with PCA normals estimated on the chosen side (`k` neighbors).
pub fn d2_psnr_auto(p: &PointCloud, q: &PointCloud, k: usize, side: NormalSide, peak: f64) -> Result<D2Result> {
    let owner = match side {
        NormalSide::Reconstruction => q,
        NormalSide::Reference => p,
    };
    let normals = estimate_normals(owner, k.min(owner.len()).max(3))?;
    d2_psnr(p, q, &normals, side, peak)
}

/// Feature payload bits per original point: `n_s * c * b / n`.
pub fn bpp(n_s: usize, c: usize, b: u32, n: usize) -> f64 {
    (n_s * c) as f64 * b as f64 / n as f64
}

/// Bits per point of uncompressed `f32` coordinates.
pub const RAW_BPP: f64 = 96.0;

/// One evaluated frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub frame_id: String,
    pub snr_db: f64,
    pub bpp: f64,
    pub cd: f64,
    pub d1_psnr: f64,
    pub d2_psnr: f64,
    /// Set when the reconstruction could not be produced (baseline decode failure).
    pub failed: bool,
}

/// Options for [`evaluate_frame`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricOptions {
    pub normal_k: usize,
    pub side: NormalSide,
    pub peak: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            normal_k: 16,
            side: NormalSide::Reconstruction,
            peak: 1.0,
        }
    }
}

/// CD, D1 and D2 of `recon` against `reference`.
pub fn evaluate_frame(
    reference: &PointCloud,
    recon: &PointCloud,
    opts: &MetricOptions,
) -> Result<(f64, f64, f64)> {
    let (a, b) = point_to_point_mse(reference, recon)?;
    let d2 = if recon.len() >= 3 && reference.len() >= 3 {
        d2_psnr_auto(reference, recon, opts.normal_k, opts.side, opts.peak)?.psnr
    } else {
        psnr_from_mse(a.max(b), opts.peak)
    };
    Ok((a + b, psnr_from_mse(a.max(b), opts.peak), d2))
}

/// Mean and median of a sample.
pub fn mean_median(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    (mean, median)
}
