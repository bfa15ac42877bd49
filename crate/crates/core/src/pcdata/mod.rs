//! Point-cloud data model, file formats, sampling and neighborhood primitives,
//! normal estimation and the synthetic LiDAR scene generator.

mod io;
mod normals;
mod sampling;
mod scene;

pub use io::{load_point_cloud, save_point_cloud, CloudFormat};
pub use normals::{estimate_normals, Normals};
pub use sampling::{
    count_within, crop_range, farthest_point_indices, farthest_point_sample, knn, knn_points,
    nearest_indices,
};
pub use scene::{synth_dataset, synth_scene, SceneParams, ScenePair};

use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion};

use crate::error::{Error, Result};

/// A LiDAR scan: `N >= 1` finite points in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    pub frame_id: String,
    /// Sensor to world transform, when known.
    pub sensor_pose: Option<Isometry3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(PointCloud {
            points,
            frame_id: String::new(),
            sensor_pose: None,
        })
    }

    pub fn with_frame_id(mut self, id: impl Into<String>) -> Self {
        self.frame_id = id.into();
        self
    }

    pub fn with_pose(mut self, pose: Isometry3<f64>) -> Self {
        self.sensor_pose = Some(pose);
        self
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn into_points(self) -> Vec<[f64; 3]> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false for a constructed cloud; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Subset by index, keeping metadata.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let mut out = PointCloud::new(points)?;
        out.frame_id = self.frame_id.clone();
        out.sensor_pose = self.sensor_pose;
        Ok(out)
    }

    /// Apply a rigid transform to every point; the pose is left untouched.
    pub fn transformed(&self, t: &Isometry3<f64>) -> Self {
        let points = self.points.iter().map(|p| transform_point(t, p)).collect();
        PointCloud {
            points,
            frame_id: self.frame_id.clone(),
            sensor_pose: self.sensor_pose,
        }
    }
}

pub fn transform_point(t: &Isometry3<f64>, p: &[f64; 3]) -> [f64; 3] {
    let q = t * Point3::new(p[0], p[1], p[2]);
    [q.x, q.y, q.z]
}

/// Row-major 4x4 homogeneous matrix of a rigid transform.
pub fn pose_to_matrix(t: &Isometry3<f64>) -> [[f64; 4]; 4] {
    let m: Matrix4<f64> = t.to_homogeneous();
    let mut out = [[0.0; 4]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    out
}

/// Inverse of [`pose_to_matrix`]. The rotation block must be orthonormal
/// within `1e-6` and the last row must be `[0, 0, 0, 1]`.
pub fn pose_from_matrix(m: &[[f64; 4]; 4]) -> Result<Isometry3<f64>> {
    let r = Matrix3::from_fn(|i, j| m[i][j]);
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let last_ok = m[3] == [0.0, 0.0, 0.0, 1.0];
    if !(ortho <= 1e-6) || !last_ok || r.determinant() <= 0.0 {
        return Err(Error::invalid("matrix is not a rigid transform"));
    }
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&r));
    Ok(Isometry3::from_parts(Translation3::new(m[0][3], m[1][3], m[2][3]), rot))
}

/// Exact k-nearest-neighbor table. Row `q` holds the `k` nearest data points of
/// query `q`, closest first; ties go to the lower index.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborIndex {
    pub fn queries(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    pub fn row_distances(&self, q: usize) -> &[f64] {
        &self.distances[q * self.k..(q + 1) * self.k]
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
