//! Exact signed Euclidean distance fields over voxel grids.
//!
//! Distances are measured between voxel centers in normalized units (voxel
//! pitch `1/R`), negative on occupied voxels, positive on empty ones. Uniform
//! grids have no opposite-occupancy neighbor and take the `±1e9` sentinel.

use std::io::{Read, Write};
use std::path::Path;

use crate::voxel::VoxelGrid;
use crate::{Error, Result};

pub const SDF_MAGIC: &[u8; 4] = b"SDF1";
pub const SDF_SENTINEL: f64 = 1e9;

/// Per-voxel signed distance, same layout as the source grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    resolution: usize,
    values: Vec<f64>,
}

impl SdfGrid {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[x + self.resolution * (y + self.resolution * z)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.values.len());
        out.extend_from_slice(SDF_MAGIC);
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(data: &[u8], origin: &Path) -> Result<Self> {
        if data.len() < 8 || &data[..4] != SDF_MAGIC {
            return Err(Error::format(origin, "missing SDF1 magic"));
        }
        let r = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
        let n = r * r * r;
        let body = &data[8..];
        if body.len() != 4 * n {
            return Err(Error::format(
                origin,
                format!("expected {} value bytes, found {}", 4 * n, body.len()),
            ));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(SdfGrid { resolution: r, values })
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
        SdfGrid::from_bytes(&data, path)
    }
}

/// Exact signed distance via three 1D lower-envelope passes per side.
pub fn compute_sdf(grid: &VoxelGrid) -> SdfGrid {
    let r = grid.resolution();
    let n = r * r * r;
    if grid.is_empty() {
        return SdfGrid { resolution: r, values: vec![SDF_SENTINEL; n] };
    }
    if grid.is_full() {
        return SdfGrid { resolution: r, values: vec![-SDF_SENTINEL; n] };
    }
    let to_occupied = squared_distance_to_occupied(grid);
    let to_empty = squared_distance_to_empty(grid);
    let scale = 1.0 / r as f64;
    let mut values = vec![0.0; n];
    for (i, v) in values.iter_mut().enumerate() {
        let x = i % r;
        let y = (i / r) % r;
        let z = i / (r * r);
        *v = if grid.get(x, y, z) {
            -to_empty[i].sqrt() * scale
        } else {
            to_occupied[i].sqrt() * scale
        };
    }
    SdfGrid { resolution: r, values }
}

/// Squared distance (integer lattice units) from every voxel center to the
/// nearest occupied voxel center. Infinite if the grid is empty.
pub(crate) fn squared_distance_to_occupied(grid: &VoxelGrid) -> Vec<f64> {
    distance_transform(grid, true)
}

fn squared_distance_to_empty(grid: &VoxelGrid) -> Vec<f64> {
    distance_transform(grid, false)
}

fn distance_transform(grid: &VoxelGrid, target_occupied: bool) -> Vec<f64> {
    let r = grid.resolution();
    let mut field = vec![0.0f64; r * r * r];
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                let hit = grid.get(x, y, z) == target_occupied;
                field[x + r * (y + r * z)] = if hit { 0.0 } else { f64::INFINITY };
            }
        }
    }

    let mut line = vec![0.0f64; r];
    let mut out = vec![0.0f64; r];
    let mut scratch = EnvelopeScratch::new(r);

    // x rows
    for z in 0..r {
        for y in 0..r {
            let base = r * (y + r * z);
            line.copy_from_slice(&field[base..base + r]);
            envelope_1d(&line, &mut out, &mut scratch);
            field[base..base + r].copy_from_slice(&out);
        }
    }
    // y columns
    for z in 0..r {
        for x in 0..r {
            for y in 0..r {
                line[y] = field[x + r * (y + r * z)];
            }
            envelope_1d(&line, &mut out, &mut scratch);
            for y in 0..r {
                field[x + r * (y + r * z)] = out[y];
            }
        }
    }
    // z columns
    for y in 0..r {
        for x in 0..r {
            for z in 0..r {
                line[z] = field[x + r * (y + r * z)];
            }
            envelope_1d(&line, &mut out, &mut scratch);
            for z in 0..r {
                field[x + r * (y + r * z)] = out[z];
            }
        }
    }
    field
}

struct EnvelopeScratch {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl EnvelopeScratch {
    fn new(n: usize) -> Self {
        EnvelopeScratch { v: vec![0; n], z: vec![0.0; n + 1] }
    }
}

/// 1D squared-distance transform: lower envelope of the parabolas
/// `d(q) = f[p] + (q - p)^2`.
fn envelope_1d(f: &[f64], out: &mut [f64], s: &mut EnvelopeScratch) {
    let n = f.len();
    let (v, z) = (&mut s.v, &mut s.z);
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            let denom = 2.0 * (q as f64 - p as f64);
            let sep = if f[p].is_infinite() {
                f64::NEG_INFINITY
            } else {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / denom
            };
            if sep <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = sep;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        out[q] = if f[p].is_infinite() {
            f64::INFINITY
        } else {
            f[p] + ((q as f64 - p as f64) * (q as f64 - p as f64))
        };
    }
}

/// O(R^6) reference: nearest opposite-occupancy voxel by exhaustive scan.
/// Test oracle; kept here so the acceptance suite and unit tests share it.
pub fn brute_force_sdf(grid: &VoxelGrid) -> SdfGrid {
    let r = grid.resolution();
    let occupied = grid.occupied();
    let empties: Vec<[usize; 3]> = {
        let mut v = Vec::new();
        for z in 0..r {
            for y in 0..r {
                for x in 0..r {
                    if !grid.get(x, y, z) {
                        v.push([x, y, z]);
                    }
                }
            }
        }
        v
    };
    let mut values = vec![0.0f64; r * r * r];
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                let here = [x, y, z];
                let targets = if grid.get(x, y, z) { &empties } else { &occupied };
                let best = targets
                    .iter()
                    .map(|t| {
                        let dx = t[0] as f64 - here[0] as f64;
                        let dy = t[1] as f64 - here[1] as f64;
                        let dz = t[2] as f64 - here[2] as f64;
                        dx * dx + dy * dy + dz * dz
                    })
                    .fold(f64::INFINITY, f64::min);
                let d = if best.is_infinite() {
                    SDF_SENTINEL
                } else {
                    best.sqrt() / r as f64
                };
                values[x + r * (y + r * z)] = if grid.get(x, y, z) { -d } else { d };
            }
        }
    }
    SdfGrid { resolution: r, values }
}
