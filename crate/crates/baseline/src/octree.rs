//! Breadth-first occupancy octree.
//!
//! Child `k` of a node covers the octant with x bit `k >> 2`, y bit
//! `(k >> 1) & 1` and z bit `k & 1`. Each internal node contributes one byte
//! whose bit `k` marks child `k` as occupied. Leaves are reconstructed at
//! their cell centers.

use lpcft::pcdata::PointCloud;
use lpcft::{Error, Result};

/// Deepest supported tree: Morton codes must fit in 64 bits.
pub const MAX_DEPTH: u8 = 21;

/// Axis-aligned bounds in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bbox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bbox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(max[a] > min[a]) || !min[a].is_finite() || !max[a].is_finite()) {
            return Err(Error::InvalidArgument(format!("degenerate bbox {min:?}..{max:?}")));
        }
        Ok(Bbox { min, max })
    }

    /// Crop box of the sensing pipeline: +-70 m in x and y, +-5 m in z.
    pub fn crop_box() -> Self {
        Bbox {
            min: [-70.0, -70.0, -5.0],
            max: [70.0, 70.0, 5.0],
        }
    }

    /// Cube of side `side` centred on the origin.
    pub fn cube(side: f64) -> Self {
        let h = side / 2.0;
        Bbox {
            min: [-h; 3],
            max: [h; 3],
        }
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Diagonal of a cell at `depth`.
    pub fn cell_diagonal(&self, depth: u8) -> f64 {
        let s = (1u64 << depth) as f64;
        (0..3)
            .map(|a| ((self.max[a] - self.min[a]) / s).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn cell_center(&self, cell: [u64; 3], level: u8) -> [f64; 3] {
        let s = (1u64 << level) as f64;
        std::array::from_fn(|a| self.min[a] + (cell[a] as f64 + 0.5) * (self.max[a] - self.min[a]) / s)
    }
}

/// Serialized octree: header plus breadth-first occupancy bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct OctreeCode {
    pub depth: u8,
    pub bbox: Bbox,
    pub occupancy: Vec<u8>,
}

impl OctreeCode {
    pub fn occupancy_bits(&self) -> usize {
        8 * self.occupancy.len()
    }

    /// 1-byte depth, six little-endian `f32` bounds (min then max), occupancy.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.depth];
        for v in self.bbox.min.iter().chain(&self.bbox.max) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(&self.occupancy);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 25 {
            return Err(Error::Parse {
                offset: bytes.len() as u64,
                message: "octree header truncated".into(),
            });
        }
        let f: Vec<f64> = bytes[1..25]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(OctreeCode {
            depth: bytes[0],
            bbox: Bbox::new([f[0], f[1], f[2]], [f[3], f[4], f[5]])?,
            occupancy: bytes[25..].to_vec(),
        })
    }
}

fn check_depth(depth: u8) -> Result<()> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::InvalidArgument(format!("octree depth must be in 1..={MAX_DEPTH}, got {depth}")));
    }
    Ok(())
}

fn interleave(cell: [u64; 3], depth: u8) -> u64 {
    (0..depth).rev().fold(0u64, |acc, l| {
        let k = ((cell[0] >> l) & 1) << 2 | ((cell[1] >> l) & 1) << 1 | ((cell[2] >> l) & 1);
        (acc << 3) | k
    })
}

pub fn octree_encode(pc: &PointCloud, depth: u8, bbox: &Bbox) -> Result<OctreeCode> {
    check_depth(depth)?;
    let side = 1u64 << depth;
    let mut codes = Vec::with_capacity(pc.len());
    for (i, p) in pc.points().iter().enumerate() {
        if !bbox.contains(p) {
            return Err(Error::InvalidArgument(format!("point {i} {p:?} lies outside the octree bbox")));
        }
        let cell: [u64; 3] = std::array::from_fn(|a| {
            let t = (p[a] - bbox.min[a]) / (bbox.max[a] - bbox.min[a]);
            ((t * side as f64) as u64).min(side - 1)
        });
        codes.push(interleave(cell, depth));
    }
    codes.sort_unstable();
    codes.dedup();

    let mut occupancy = Vec::new();
    for level in 0..depth {
        // Nodes at `level` are the distinct prefixes; their children are the
        // next 3-bit digit. Sorted codes keep breadth-first order.
        let shift = 3 * (depth - level - 1) as u32;
        let mut current: Option<(u64, u8)> = None;
        for &c in &codes {
            let node = c >> (shift + 3);
            let child = ((c >> shift) & 7) as u8;
            match current {
                Some((n, ref mut byte)) if n == node => *byte |= 1 << child,
                _ => {
                    if let Some((_, b)) = current {
                        occupancy.push(b);
                    }
                    current = Some((node, 1 << child));
                }
            }
        }
        if let Some((_, b)) = current {
            occupancy.push(b);
        }
    }
    Ok(OctreeCode {
        depth,
        bbox: *bbox,
        occupancy,
    })
}

/// Walks the stream level by level. Returns the cells of the deepest level
/// reached, that level, and how many bytes were consumed. With `strict`,
/// empty nodes, truncation and trailing bytes are errors; otherwise nodes
/// without a byte are dropped and leftovers ignored.
fn walk(code: &OctreeCode, max_bytes: usize, strict: bool) -> Result<(Vec<[u64; 3]>, u8, usize)> {
    check_depth(code.depth)?;
    let bytes = &code.occupancy[..max_bytes.min(code.occupancy.len())];
    let mut level_nodes = vec![[0u64; 3]];
    let mut pos = 0;
    for level in 0..code.depth {
        if !strict && pos + level_nodes.len() > bytes.len() {
            // Not every node of this level has its byte: stop one level up.
            return Ok((level_nodes, level, pos));
        }
        let mut next = Vec::with_capacity(level_nodes.len() * 2);
        for node in &level_nodes {
            let Some(&b) = bytes.get(pos) else {
                return Err(Error::Parse {
                    offset: pos as u64,
                    message: format!("occupancy stream truncated at level {level}"),
                });
            };
            if b == 0 && strict {
                return Err(Error::Parse {
                    offset: pos as u64,
                    message: "occupied node without children".into(),
                });
            }
            pos += 1;
            for k in 0..8u64 {
                if b & (1 << k) != 0 {
                    next.push([node[0] << 1 | k >> 2, node[1] << 1 | (k >> 1) & 1, node[2] << 1 | k & 1]);
                }
            }
        }
        level_nodes = next;
    }
    if strict && pos != bytes.len() {
        return Err(Error::Parse {
            offset: pos as u64,
            message: format!("{} trailing occupancy bytes", bytes.len() - pos),
        });
    }
    Ok((level_nodes, code.depth, pos))
}

fn centers(code: &OctreeCode, cells: &[[u64; 3]], level: u8) -> Result<PointCloud> {
    PointCloud::new(cells.iter().map(|c| code.bbox.cell_center(*c, level)).collect())
}

/// One point per occupied leaf, at the cell center.
pub fn octree_decode(code: &OctreeCode) -> Result<PointCloud> {
    let (cells, level, _) = walk(code, usize::MAX, true)?;
    centers(code, &cells, level)
}

/// Coarse reconstruction from the first `bytes` occupancy bytes: cell
/// centers of the deepest level whose nodes are all described.
pub fn octree_decode_prefix(code: &OctreeCode, bytes: usize) -> Result<(PointCloud, u8)> {
    let (cells, level, _) = walk(code, bytes, false)?;
    if cells.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok((centers(code, &cells, level)?, level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lpcft::pcdata::nearest_indices;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(seed: u64, n: usize, bbox: &Bbox) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| std::array::from_fn(|a| rng.gen_range(bbox.min[a]..=bbox.max[a])))
            .collect();
        PointCloud::new(pts).unwrap()
    }

    fn max_error(pc: &PointCloud, dec: &PointCloud) -> f64 {
        let (_, d2) = nearest_indices(dec.points(), pc.points());
        d2.into_iter().fold(0.0, f64::max).sqrt()
    }

    #[test]
    fn single_point_path() {
        let pc = PointCloud::new(vec![[1.0, -2.0, 0.5]]).unwrap();
        for d in [1u8, 4, 10] {
            let code = octree_encode(&pc, d, &Bbox::cube(140.0)).unwrap();
            assert_eq!(code.occupancy.len(), d as usize);
            assert!(code.occupancy.iter().all(|b| b.count_ones() == 1));
            assert_eq!(octree_decode(&code).unwrap().len(), 1);
        }
    }

    #[test]
    fn first_byte_matches_octants() {
        // Corner points of a unit cube fill octants 0 and 7.
        let pc = PointCloud::new(vec![[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]]).unwrap();
        let code = octree_encode(&pc, 1, &Bbox::new([0.0; 3], [1.0; 3]).unwrap()).unwrap();
        assert_eq!(code.occupancy, vec![0b1000_0001]);
        let dec = octree_decode(&code).unwrap();
        assert_eq!(dec.points(), &[[0.25, 0.25, 0.25], [0.75, 0.75, 0.75]]);
    }

    #[test]
    fn sixteen_points_depth_ten() {
        let bbox = Bbox::cube(140.0);
        let pc = random_cloud(1, 16, &bbox);
        let code = octree_encode(&pc, 10, &bbox).unwrap();
        let dec = octree_decode(&code).unwrap();
        let bound = 140.0 * 3f64.sqrt() / 2f64.powi(11);
        assert!((bound - 0.118).abs() < 1e-3);
        assert!(max_error(&pc, &dec) <= bound);
        assert!(dec.len() <= 16);
        assert_eq!(octree_encode(&pc, 10, &bbox).unwrap(), code);
    }

    #[test]
    fn outside_point_is_rejected() {
        let pc = PointCloud::new(vec![[0.0, 0.0, 6.0]]).unwrap();
        assert!(matches!(octree_encode(&pc, 4, &Bbox::crop_box()), Err(Error::InvalidArgument(_))));
        assert!(octree_encode(&pc, 0, &Bbox::cube(20.0)).is_err());
    }

    #[test]
    fn flipping_an_early_bit_changes_the_count() {
        let bbox = Bbox::crop_box();
        let pc = random_cloud(2, 200, &bbox);
        let code = octree_encode(&pc, 8, &bbox).unwrap();
        let n0 = octree_decode(&code).unwrap().len();
        for bit in 0..8 {
            let mut bad = code.clone();
            bad.occupancy[0] ^= 1 << bit;
            let strict = octree_decode(&bad);
            let lossy = walk(&bad, usize::MAX, false).unwrap().0.len();
            assert!(strict.is_err() || strict.unwrap().len() != n0);
            assert_ne!(lossy, n0, "bit {bit}");
        }
    }

    #[test]
    fn truncation_and_overrun_are_errors() {
        let bbox = Bbox::crop_box();
        let code = octree_encode(&random_cloud(3, 50, &bbox), 6, &bbox).unwrap();
        let mut short = code.clone();
        short.occupancy.pop();
        assert!(matches!(octree_decode(&short), Err(Error::Parse { .. })));
        let mut long = code.clone();
        long.occupancy.push(1);
        assert!(octree_decode(&long).is_err());
        assert_eq!(OctreeCode::from_bytes(&code.to_bytes()).unwrap(), code);
        assert!(OctreeCode::from_bytes(&[3, 0, 0]).is_err());
    }

    #[test]
    fn prefix_decode_is_coarser() {
        let bbox = Bbox::crop_box();
        let pc = random_cloud(4, 300, &bbox);
        let code = octree_encode(&pc, 9, &bbox).unwrap();
        let (full, level) = octree_decode_prefix(&code, usize::MAX).unwrap();
        assert_eq!(level, 9);
        assert_eq!(full, octree_decode(&code).unwrap());
        let (coarse, l) = octree_decode_prefix(&code, code.occupancy.len() / 8).unwrap();
        assert!(l < 9 && coarse.len() < full.len());
        assert!(max_error(&pc, &coarse) <= bbox.cell_diagonal(l) / 2.0 + 1e-9);
        let (root, l0) = octree_decode_prefix(&code, 0).unwrap();
        assert_eq!((root.points(), l0), (&[[0.0, 0.0, 0.0]][..], 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn roundtrip_error_is_within_half_cell_diagonal(seed in any::<u64>(), n in 1usize..400, depth in 6u8..=12) {
            let bbox = Bbox::crop_box();
            let pc = random_cloud(seed, n, &bbox);
            let dec = octree_decode(&octree_encode(&pc, depth, &bbox).unwrap()).unwrap();
            prop_assert!(dec.len() <= n);
            prop_assert!(max_error(&pc, &dec) <= bbox.cell_diagonal(depth) / 2.0 * (1.0 + 1e-12));
        }
    }
}
