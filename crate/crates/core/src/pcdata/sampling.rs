use super::{dist2, NeighborIndex, PointCloud};
use crate::error::{Error, Result};

/// Keep points with `|x| <= xy_limit` and `|y| <= xy_limit`, order preserved.
pub fn crop_range(pc: &PointCloud, xy_limit: f64) -> Result<PointCloud> {
    if !(xy_limit > 0.0) {
        return Err(Error::invalid(format!("xy_limit must be positive, got {xy_limit}")));
    }
    let kept: Vec<usize> = pc
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| p[0].abs() <= xy_limit && p[1].abs() <= xy_limit)
        .map(|(i, _)| i)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyCloud);
    }
    pc.select(&kept)
}

/// Greedy max-min selection. The first pick is `seed_index`; later picks
/// maximize the distance to the selected set, lowest index on ties.
pub fn farthest_point_indices(points: &[[f64; 3]], n: usize, seed_index: usize) -> Result<Vec<usize>> {
    if n == 0 || n > points.len() {
        return Err(Error::invalid(format!(
            "cannot sample {n} of {} points",
            points.len()
        )));
    }
    if seed_index >= points.len() {
        return Err(Error::invalid(format!("seed index {seed_index} out of range")));
    }
    let mut picks = Vec::with_capacity(n);
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut current = seed_index;
    picks.push(current);
    while picks.len() < n {
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, (p, md)) in points.iter().zip(min_d.iter_mut()).enumerate() {
            let d = dist2(p, &c);
            if d < *md {
                *md = d;
            }
            if *md > best_d {
                best_d = *md;
                best = i;
            }
        }
        current = best;
        picks.push(current);
    }
    Ok(picks)
}

pub fn farthest_point_sample(pc: &PointCloud, n: usize, seed_index: usize) -> Result<PointCloud> {
    let idx = farthest_point_indices(pc.points(), n, seed_index)?;
    pc.select(&idx)
}

/// Exact k-nearest neighbors of `queries` among `data`.
pub fn knn_points(data: &[[f64; 3]], queries: &[[f64; 3]], k: usize) -> Result<NeighborIndex> {
    if k == 0 || k > data.len() {
        return Err(Error::invalid(format!(
            "k = {k} is invalid for {} data points",
            data.len()
        )));
    }
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut distances = Vec::with_capacity(queries.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(data.len());
    for q in queries {
        scratch.clear();
        scratch.extend(data.iter().enumerate().map(|(i, p)| (dist2(p, q), i)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        let head = &mut scratch[..k];
        head.sort_unstable_by(cmp);
        for &(d, i) in head.iter() {
            indices.push(i);
            distances.push(d.sqrt());
        }
    }
    Ok(NeighborIndex { k, indices, distances })
}

pub fn knn(pc: &PointCloud, queries: &[[f64; 3]], k: usize) -> Result<NeighborIndex> {
    knn_points(pc.points(), queries, k)
}

/// Index and squared distance of the nearest data point for every query.
pub fn nearest_indices(data: &[[f64; 3]], queries: &[[f64; 3]]) -> (Vec<usize>, Vec<f64>) {
    let mut idx = Vec::with_capacity(queries.len());
    let mut d2 = Vec::with_capacity(queries.len());
    for q in queries {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in data.iter().enumerate() {
            let d = dist2(p, q);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        idx.push(best);
        d2.push(best_d);
    }
    (idx, d2)
}

/// Number of data points within `radius` (closed ball) of each query.
pub fn count_within(data: &[[f64; 3]], queries: &[[f64; 3]], radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    queries
        .iter()
        .map(|q| data.iter().filter(|p| dist2(p, q) <= r2).count())
        .collect()
}
