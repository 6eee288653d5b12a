//! Bit-packed occupancy grids, surface triangulation, and evaluation metrics.
//!
//! Everything lives in the normalized cube `[-0.5, 0.5]^3`: a grid of
//! resolution `R` divides it into `R^3` cells of pitch `1/R`, and voxel
//! `(x, y, z)` owns the cell whose center is `((x + 0.5)/R - 0.5, ...)`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::sdf;
use crate::{Error, Result};

pub const VOXEL_MAGIC: &[u8; 4] = b"VXG1";

/// Dense binary occupancy grid, row-major with x fastest, one bit per voxel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelGrid {
    resolution: usize,
    words: Vec<u64>,
}

impl VoxelGrid {
    /// Empty grid. `resolution` must be at least 2.
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::invalid(format!(
                "grid resolution must be >= 2, got {resolution}"
            )));
        }
        let bits = resolution * resolution * resolution;
        Ok(VoxelGrid { resolution, words: vec![0; bits.div_ceil(64)] })
    }

    /// Build a grid by evaluating `f` at every voxel index.
    pub fn from_fn(resolution: usize, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let mut g = VoxelGrid::new(resolution)?;
        for z in 0..resolution {
            for y in 0..resolution {
                for x in 0..resolution {
                    if f(x, y, z) {
                        g.set(x, y, z, true);
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    fn bit_index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.resolution && y < self.resolution && z < self.resolution);
        x + self.resolution * (y + self.resolution * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        let i = self.bit_index(x, y, z);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.bit_index(x, y, z);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count_occupied(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn is_full(&self) -> bool {
        self.count_occupied() == self.resolution.pow(3)
    }

    /// Occupied voxel indices in row-major order (x fastest).
    pub fn occupied(&self) -> Vec<[usize; 3]> {
        let r = self.resolution;
        let mut out = Vec::with_capacity(self.count_occupied());
        for z in 0..r {
            for y in 0..r {
                for x in 0..r {
                    if self.get(x, y, z) {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    }

    /// Normalized center of voxel `(x, y, z)`.
    pub fn center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let r = self.resolution as f64;
        [
            (x as f64 + 0.5) / r - 0.5,
            (y as f64 + 0.5) / r - 0.5,
            (z as f64 + 0.5) / r - 0.5,
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let bits = self.resolution.pow(3);
        let nbytes = bits.div_ceil(8);
        let mut out = Vec::with_capacity(8 + nbytes);
        out.extend_from_slice(VOXEL_MAGIC);
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        let mut bytes: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        bytes.truncate(nbytes);
        out.extend_from_slice(&bytes);
        out
    }

    pub fn from_bytes(data: &[u8], origin: &Path) -> Result<Self> {
        if data.len() < 8 || &data[..4] != VOXEL_MAGIC {
            return Err(Error::format(origin, "missing VXG1 magic"));
        }
        let r = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
        if r < 2 {
            return Err(Error::format(origin, format!("resolution {r} < 2")));
        }
        let bits = r * r * r;
        let nbytes = bits.div_ceil(8);
        let body = &data[8..];
        if body.len() != nbytes {
            return Err(Error::format(
                origin,
                format!("expected {nbytes} occupancy bytes, found {}", body.len()),
            ));
        }
        let mut words = vec![0u64; bits.div_ceil(64)];
        for (i, &b) in body.iter().enumerate() {
            words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        // Mask padding bits above R^3 so equality is well defined.
        let tail = bits % 64;
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Ok(VoxelGrid { resolution: r, words })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut data = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(|e| Error::io(path, e))?;
        VoxelGrid::from_bytes(&data, path)
    }
}

/// Points in the normalized cube.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<[f64; 3]>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            for &c in p {
                if !c.is_finite() {
                    return Err(Error::invalid(format!("point {i} has non-finite coordinate")));
                }
                if !(-0.5..=0.5).contains(&c) {
                    return Err(Error::invalid(format!(
                        "point {i} = ({}, {}, {}) outside [-0.5, 0.5]^3",
                        p[0], p[1], p[2]
                    )));
                }
            }
        }
        Ok(PointSet { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Surface mesh of a grid; every triangle remembers which voxel it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-triangle integer coordinate of the source voxel.
    pub face_coords: Vec<[u32; 3]>,
}

impl CoordMesh {
    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }
}

/// Mark every cell that contains at least one point.
///
/// Cell of a point `p` is `floor((p + 0.5) * R)` clamped into the grid, so
/// points sitting exactly on the `+0.5` boundary stay inside.
pub fn voxelize_points(points: &PointSet, resolution: usize) -> Result<VoxelGrid> {
    let mut grid = VoxelGrid::new(resolution)?;
    let r = resolution as f64;
    for p in points.points() {
        let cell = |c: f64| -> usize { (((c + 0.5) * r).floor() as isize).clamp(0, resolution as isize - 1) as usize };
        grid.set(cell(p[0]), cell(p[1]), cell(p[2]), true);
    }
    Ok(grid)
}

/// One point per occupied voxel, at its normalized center, row-major order.
pub fn occupied_centers(grid: &VoxelGrid) -> PointSet {
    let points = grid
        .occupied()
        .iter()
        .map(|&[x, y, z]| grid.center(x, y, z))
        .collect();
    PointSet { points }
}

// Quad corners per face direction, wound so the cross product of the first
// two edges points outward.
const FACE_TABLE: [([i32; 3], [[usize; 3]; 4]); 6] = [
    ([1, 0, 0], [[1, 0, 0], [1, 1, 0], [1, 1, 1], [1, 0, 1]]),
    ([-1, 0, 0], [[0, 0, 0], [0, 0, 1], [0, 1, 1], [0, 1, 0]]),
    ([0, 1, 0], [[0, 1, 0], [0, 1, 1], [1, 1, 1], [1, 1, 0]]),
    ([0, -1, 0], [[0, 0, 0], [1, 0, 0], [1, 0, 1], [0, 0, 1]]),
    ([0, 0, 1], [[0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]),
    ([0, 0, -1], [[0, 0, 0], [0, 1, 0], [1, 1, 0], [1, 0, 0]]),
];

/// Emit two triangles for every voxel face adjacent to an empty voxel or the
/// grid boundary. Vertices are cube corners mapped to normalized space.
pub fn triangulate(grid: &VoxelGrid) -> CoordMesh {
    let r = grid.resolution();
    let rf = r as f64;
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut lookup: HashMap<[u32; 3], u32> = HashMap::new();
    let mut triangles = Vec::new();
    let mut face_coords = Vec::new();

    let mut corner = |c: [usize; 3], vertices: &mut Vec<[f64; 3]>| -> u32 {
        let key = [c[0] as u32, c[1] as u32, c[2] as u32];
        *lookup.entry(key).or_insert_with(|| {
            vertices.push([
                c[0] as f64 / rf - 0.5,
                c[1] as f64 / rf - 0.5,
                c[2] as f64 / rf - 0.5,
            ]);
            (vertices.len() - 1) as u32
        })
    };

    for [x, y, z] in grid.occupied() {
        for (dir, quad) in FACE_TABLE.iter() {
            let nx = x as i32 + dir[0];
            let ny = y as i32 + dir[1];
            let nz = z as i32 + dir[2];
            let exposed = nx < 0
                || ny < 0
                || nz < 0
                || nx >= r as i32
                || ny >= r as i32
                || nz >= r as i32
                || !grid.get(nx as usize, ny as usize, nz as usize);
            if !exposed {
                continue;
            }
            let ids: Vec<u32> = quad
                .iter()
                .map(|off| corner([x + off[0], y + off[1], z + off[2]], &mut vertices))
                .collect();
            triangles.push([ids[0], ids[1], ids[2]]);
            triangles.push([ids[0], ids[2], ids[3]]);
            let fc = [x as u32, y as u32, z as u32];
            face_coords.push(fc);
            face_coords.push(fc);
        }
    }
    CoordMesh { vertices, triangles, face_coords }
}

/// Intersection over union of two occupancy sets. Two empty grids agree
/// perfectly and score 1.
pub fn iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.resolution != b.resolution {
        return Err(Error::shape(format!(
            "iou resolutions differ: {} vs {}",
            a.resolution, b.resolution
        )));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (wa, wb) in a.words.iter().zip(&b.words) {
        inter += (wa & wb).count_ones() as u64;
        union += (wa | wb).count_ones() as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Symmetric mean squared nearest-neighbor distance between the occupied
/// voxel centers of `a` and `b`, in normalized units.
pub fn chamfer(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance is undefined for empty grids"));
    }
    if a.resolution == b.resolution {
        // Centers form a lattice, so nearest-neighbor distances are exactly
        // the squared Euclidean distance transform of the other grid.
        let r = a.resolution;
        let to_b = sdf::squared_distance_to_occupied(b);
        let to_a = sdf::squared_distance_to_occupied(a);
        let norm = (r * r) as f64;
        let mean_over = |src: &VoxelGrid, field: &[f64]| -> f64 {
            let mut sum = 0.0;
            let mut n = 0usize;
            for (i, &d2) in field.iter().enumerate() {
                let x = i % r;
                let y = (i / r) % r;
                let z = i / (r * r);
                if src.get(x, y, z) {
                    sum += d2 / norm;
                    n += 1;
                }
            }
            sum / n as f64
        };
        Ok(mean_over(a, &to_b) + mean_over(b, &to_a))
    } else {
        let pa = occupied_centers(a);
        let pb = occupied_centers(b);
        Ok(mean_sq_nn(pa.points(), pb.points()) + mean_sq_nn(pb.points(), pa.points()))
    }
}

fn mean_sq_nn(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    let dx = p[0] - q[0];
                    let dy = p[1] - q[1];
                    let dz = p[2] - q[2];
                    dx * dx + dy * dy + dz * dz
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_of(resolution: usize, cells: &[[usize; 3]]) -> VoxelGrid {
        let mut g = VoxelGrid::new(resolution).unwrap();
        for &[x, y, z] in cells {
            g.set(x, y, z, true);
        }
        g
    }

    #[test]
    fn resolution_below_two_rejected() {
        assert!(VoxelGrid::new(1).is_err());
    }

    #[test]
    fn voxelize_empty_points_gives_empty_grid() {
        let g = voxelize_points(&PointSet::new(vec![]).unwrap(), 8).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn voxelize_origin_lands_in_center_cell() {
        let g = voxelize_points(&PointSet::new(vec![[0.0, 0.0, 0.0]]).unwrap(), 8).unwrap();
        assert_eq!(g.count_occupied(), 1);
        assert!(g.get(4, 4, 4));
    }

    #[test]
    fn voxelize_same_cell_is_idempotent() {
        let pts = PointSet::new(vec![[0.01, 0.0, 0.0], [0.02, 0.01, 0.0]]).unwrap();
        let g = voxelize_points(&pts, 8).unwrap();
        assert_eq!(g.count_occupied(), 1);
    }

    #[test]
    fn voxelize_boundary_point_clamps_inside() {
        let g = voxelize_points(&PointSet::new(vec![[0.5, 0.5, 0.5]]).unwrap(), 4).unwrap();
        assert!(g.get(3, 3, 3));
    }

    #[test]
    fn nonfinite_point_rejected() {
        assert!(PointSet::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn centers_hand_case() {
        let g = grid_of(2, &[[0, 0, 0]]);
        let pts = occupied_centers(&g);
        assert_eq!(pts.points(), &[[-0.25, -0.25, -0.25]]);
    }

    #[test]
    fn centers_of_full_two_grid_are_symmetric() {
        let g = VoxelGrid::from_fn(2, |_, _, _| true).unwrap();
        let pts = occupied_centers(&g);
        assert_eq!(pts.len(), 8);
        let sum: [f64; 3] = pts.points().iter().fold([0.0; 3], |acc, p| {
            [acc[0] + p[0], acc[1] + p[1], acc[2] + p[2]]
        });
        assert!(sum.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn triangulate_counts() {
        assert_eq!(triangulate(&VoxelGrid::new(4).unwrap()).triangle_count(), 0);
        assert_eq!(triangulate(&grid_of(4, &[[1, 1, 1]])).triangle_count(), 12);
        // Two face-adjacent voxels expose 10 faces.
        assert_eq!(
            triangulate(&grid_of(4, &[[1, 1, 1], [2, 1, 1]])).triangle_count(),
            20
        );
    }

    /// Brute-force face-exposure oracle: triangles == 2 * exposed faces.
    #[test]
    fn triangulate_matches_exposure_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let g = VoxelGrid::from_fn(5, |_, _, _| rng.random::<f64>() < 0.4).unwrap();
            let mut exposed = 0usize;
            for [x, y, z] in g.occupied() {
                for (d, _) in FACE_TABLE.iter() {
                    let n = [x as i32 + d[0], y as i32 + d[1], z as i32 + d[2]];
                    if n.iter().any(|&c| c < 0 || c >= 5)
                        || !g.get(n[0] as usize, n[1] as usize, n[2] as usize)
                    {
                        exposed += 1;
                    }
                }
            }
            let mesh = triangulate(&g);
            assert_eq!(mesh.triangle_count(), 2 * exposed);
            for fc in &mesh.face_coords {
                assert!(g.get(fc[0] as usize, fc[1] as usize, fc[2] as usize));
            }
        }
    }

    #[test]
    fn iou_cases() {
        let a = grid_of(4, &[[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        let b = grid_of(4, &[[0, 0, 0], [3, 3, 3]]);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.25);
        let disjoint = grid_of(4, &[[3, 0, 0]]);
        assert_eq!(iou(&a, &disjoint).unwrap(), 0.0);
        let empty = VoxelGrid::new(4).unwrap();
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert!(iou(&a, &VoxelGrid::new(8).unwrap()).is_err());
    }

    #[test]
    fn chamfer_cases() {
        let a = grid_of(8, &[[0, 0, 0]]);
        let b = grid_of(8, &[[1, 0, 0]]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let d = chamfer(&a, &b).unwrap();
        assert!((d - 2.0 * (1.0 / 8.0f64).powi(2)).abs() < 1e-12, "{d}");
        assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        assert!(chamfer(&a, &VoxelGrid::new(8).unwrap()).is_err());
    }

    /// The lattice fast path must agree with plain nearest-neighbor search.
    #[test]
    fn chamfer_matches_bruteforce() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = VoxelGrid::from_fn(6, |_, _, _| rng.random::<f64>() < 0.3).unwrap();
            let b = VoxelGrid::from_fn(6, |_, _, _| rng.random::<f64>() < 0.3).unwrap();
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let fast = chamfer(&a, &b).unwrap();
            let pa = occupied_centers(&a);
            let pb = occupied_centers(&b);
            let brute = mean_sq_nn(pa.points(), pb.points()) + mean_sq_nn(pb.points(), pa.points());
            assert!((fast - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn centers_roundtrip_through_voxelize() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let g = VoxelGrid::from_fn(7, |_, _, _| rng.random::<f64>() < 0.5).unwrap();
            let back = voxelize_points(&occupied_centers(&g), 7).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn file_roundtrip_and_errors() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let g = VoxelGrid::from_fn(9, |_, _, _| rng.random::<f64>() < 0.5).unwrap();
        let bytes = g.to_bytes();
        let back = VoxelGrid::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_bytes(), bytes);

        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(
            VoxelGrid::from_bytes(truncated, Path::new("mem")),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            VoxelGrid::from_bytes(&bad, Path::new("mem")),
            Err(Error::Format { .. })
        ));
    }
}
