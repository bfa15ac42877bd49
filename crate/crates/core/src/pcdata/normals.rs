use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{knn_points, PointCloud};
use crate::error::{Error, Result};

/// Per-point unit normals. Points whose neighborhood covariance vanishes get a
/// zero normal and are flagged as degenerate.
#[derive(Clone, Debug)]
pub struct Normals {
    pub normals: Vec<[f64; 3]>,
    pub degenerate: Vec<bool>,
}

impl Normals {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }
}

const SIGN_EPS: f64 = 1e-9;

/// PCA normals over the `k`-nearest neighborhood (point included).
///
/// Orientation: z >= 0; when z is zero, y >= 0; then x >= 0.
pub fn estimate_normals(pc: &PointCloud, k: usize) -> Result<Normals> {
    if k < 3 {
        return Err(Error::invalid(format!("normal estimation needs k >= 3, got {k}")));
    }
    if pc.len() < k {
        return Err(Error::invalid(format!(
            "normal estimation needs at least {k} points, got {}",
            pc.len()
        )));
    }
    let pts = pc.points();
    let nn = knn_points(pts, pts, k)?;
    let mut normals = Vec::with_capacity(pts.len());
    let mut degenerate = Vec::with_capacity(pts.len());
    for q in 0..pts.len() {
        let row = nn.row(q);
        let mut mean = Vector3::zeros();
        for &j in row {
            mean += Vector3::from(pts[j]);
        }
        mean /= k as f64;
        let mut cov = Matrix3::zeros();
        for &j in row {
            let d = Vector3::from(pts[j]) - mean;
            cov += d * d.transpose();
        }
        cov /= k as f64;
        if cov.abs().max() <= f64::EPSILON * (1.0 + mean.norm()).powi(2) {
            normals.push([0.0; 3]);
            degenerate.push(true);
            continue;
        }
        let eig = SymmetricEigen::new(cov);
        let (imin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let n = eig.eigenvectors.column(imin).normalize();
        normals.push(orient([n.x, n.y, n.z]));
        degenerate.push(false);
    }
    Ok(Normals { normals, degenerate })
}

fn orient(n: [f64; 3]) -> [f64; 3] {
    let flip = if n[2].abs() > SIGN_EPS {
        n[2] < 0.0
    } else if n[1].abs() > SIGN_EPS {
        n[1] < 0.0
    } else {
        n[0] < 0.0
    };
    if flip {
        [-n[0], -n[1], -n[2]]
    } else {
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(f: impl Fn(f64, f64) -> [f64; 3]) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(f(i as f64 * 0.3, j as f64 * 0.4));
            }
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn plane_z0_points_up() {
        let n = estimate_normals(&grid(|a, b| [a, b, 0.0]), 8).unwrap();
        for v in &n.normals {
            assert!((v[2] - 1.0).abs() < 1e-9, "{v:?}");
        }
    }

    #[test]
    fn plane_x3_uses_sign_rule() {
        let n = estimate_normals(&grid(|a, b| [3.0, a, b]), 8).unwrap();
        for v in &n.normals {
            assert!((v[0] - 1.0).abs() < 1e-9 && v[1].abs() < 1e-9 && v[2].abs() < 1e-9, "{v:?}");
        }
    }

    #[test]
    fn jittered_plane_within_five_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = Vector3::new(0.3, -0.5, 0.8).normalize();
        let u = truth.cross(&Vector3::x()).normalize();
        let v = truth.cross(&u);
        let pts: Vec<[f64; 3]> = (0..400)
            .map(|_| {
                let p = u * rng.gen_range(-5.0..5.0)
                    + v * rng.gen_range(-5.0..5.0)
                    + truth * rng.gen_range(-0.02..0.02);
                [p.x, p.y, p.z]
            })
            .collect();
        let n = estimate_normals(&PointCloud::new(pts).unwrap(), 16).unwrap();
        for est in &n.normals {
            let cos = Vector3::from(*est).dot(&truth).abs();
            assert!(cos.acos().to_degrees() < 5.0);
            assert!((Vector3::from(*est).norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let pc = PointCloud::new(vec![[1.0, 1.0, 1.0]; 5]).unwrap();
        let n = estimate_normals(&pc, 3).unwrap();
        assert_eq!(n.degenerate_count(), 5);
        assert_eq!(n.normals[0], [0.0; 3]);
        assert!(estimate_normals(&pc, 2).is_err());
        assert!(estimate_normals(&pc, 6).is_err());
    }
}
