//! Cameras, a deterministic software rasterizer, and image-index pooling.
//!
//! The rasterizer draws the triangulated grid twice over the same z-buffer
//! core: once writing the source-voxel coordinate of the nearest face into
//! each pixel (the index map — coordinates are identifiers, so there is no
//! blending or antialiasing), and once writing remapped face normals (the
//! condition image).

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::voxel::CoordMesh;
use crate::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"IIX1";
pub const IMAGE_MAGIC: &[u8; 4] = b"IMG1";

const NEAR_PLANE: f64 = 1e-6;

/// Pinhole camera: 4x4 world-to-camera extrinsic (row-major) plus intrinsics
/// in pixels. Camera space is x-right, y-down, z-forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPose {
    pub extrinsic: [f64; 16],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be positive"));
        }
        let e = &self.extrinsic;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| e[i * 4 + k] * e[j * 4 + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    /// World position of the camera center (R^T applied to -t).
    pub fn position(&self) -> [f64; 3] {
        let e = &self.extrinsic;
        let t = [e[3], e[7], e[11]];
        let mut p = [0.0; 3];
        for (k, tk) in t.iter().enumerate() {
            for i in 0..3 {
                p[i] -= e[k * 4 + i] * tk;
            }
        }
        p
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let e = &self.extrinsic;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = e[i * 4] * p[0] + e[i * 4 + 1] * p[1] + e[i * 4 + 2] * p[2] + e[i * 4 + 3];
        }
        out
    }

    /// Ray direction in world space through pixel coordinates `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> [f64; 3] {
        let d_cam = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let e = &self.extrinsic;
        let mut d = [0.0; 3];
        for (k, dk) in d_cam.iter().enumerate() {
            for i in 0..3 {
                d[i] += e[k * 4 + i] * dk; // R^T * d_cam
            }
        }
        d
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cam: CameraPose =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cam.validate()?;
        Ok(cam)
    }
}

/// Place a camera at `position` looking at the origin, up resolved from +z
/// with Gram-Schmidt (+x fallback when colinear), square pixels, principal
/// point at the image center.
pub fn make_lookat_camera(
    position: [f64; 3],
    fov_y: f64,
    width: usize,
    height: usize,
) -> Result<CameraPose> {
    let norm = (position[0].powi(2) + position[1].powi(2) + position[2].powi(2)).sqrt();
    if norm < 1e-12 {
        return Err(Error::invalid("camera position must not be the origin"));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("camera image size must be positive"));
    }
    let fwd = [-position[0] / norm, -position[1] / norm, -position[2] / norm];
    let up_hint = if fwd[0].abs() < 1e-9 && fwd[1].abs() < 1e-9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let right = normalize(cross(fwd, up_hint));
    let down = cross(fwd, right); // y-down camera basis, right-handed
    let mut e = [0.0; 16];
    for (row, axis) in [right, down, fwd].iter().enumerate() {
        e[row * 4] = axis[0];
        e[row * 4 + 1] = axis[1];
        e[row * 4 + 2] = axis[2];
        e[row * 4 + 3] = -(axis[0] * position[0] + axis[1] * position[1] + axis[2] * position[2]);
    }
    e[15] = 1.0;
    let fy = (height as f64 / 2.0) / (fov_y / 2.0).tan();
    let cam = CameraPose {
        extrinsic: e,
        fx: fy,
        fy,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
    };
    cam.validate()?;
    Ok(cam)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Per-pixel voxel coordinate of the nearest rendered face, null elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMap {
    pub width: usize,
    pub height: usize,
    cells: Vec<Option<[u32; 3]>>,
    depth: Vec<f64>,
}

impl IndexMap {
    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> Option<[u32; 3]> {
        self.cells[y * self.width + x]
    }

    pub fn depth(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn covered_pixels(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Debug dump: P5 greymap of coverage plus a CSV of non-null pixels.
    pub fn write_debug(&self, pgm_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<()> {
        let pgm_path = pgm_path.as_ref();
        let mut pgm = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        pgm.extend(self.cells.iter().map(|c| if c.is_some() { 255u8 } else { 0u8 }));
        std::fs::write(pgm_path, pgm).map_err(|e| Error::io(pgm_path, e))?;

        let csv_path = csv_path.as_ref();
        let mut csv = String::from("px,py,x,y,z\n");
        for y in 0..self.height {
            for x in 0..self.width {
                if let Some(c) = self.cell(x, y) {
                    csv.push_str(&format!("{x},{y},{},{},{}\n", c[0], c[1], c[2]));
                }
            }
        }
        std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))
    }
}

/// Float RGB image in `[0, 1]`, background zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderImage {
    pub width: usize,
    pub height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RenderImage {
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.pixels.len() * 12);
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for p in &self.pixels {
            for c in p {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8], origin: &Path) -> Result<Self> {
        if data.len() < 12 || &data[..4] != IMAGE_MAGIC {
            return Err(Error::format(origin, "missing IMG1 magic"));
        }
        let w = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
        let body = &data[12..];
        if body.len() != w * h * 12 {
            return Err(Error::format(
                origin,
                format!("expected {} pixel bytes, found {}", w * h * 12, body.len()),
            ));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for chunk in body.chunks_exact(12) {
            let mut p = [0.0f64; 3];
            for (i, c) in chunk.chunks_exact(4).enumerate() {
                p[i] = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            }
            pixels.push(p);
        }
        Ok(RenderImage { width: w, height: h, pixels })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut data = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(|e| Error::io(path, e))?;
        RenderImage::from_bytes(&data, path)
    }
}

/// Shared z-buffer core: per pixel, the index of the nearest triangle.
fn rasterize(mesh: &CoordMesh, cam: &CameraPose) -> (Vec<i64>, Vec<f64>) {
    let w = cam.width;
    let h = cam.height;
    let mut tri_of = vec![-1i64; w * h];
    let mut depth = vec![f64::INFINITY; w * h];

    for (t, tri) in mesh.triangles.iter().enumerate() {
        let mut sx = [0.0f64; 3];
        let mut sy = [0.0f64; 3];
        let mut zinv = [0.0f64; 3];
        let mut behind = false;
        for i in 0..3 {
            let p = cam.world_to_camera(mesh.vertices[tri[i] as usize]);
            if p[2] <= NEAR_PLANE {
                behind = true;
                break;
            }
            sx[i] = cam.fx * p[0] / p[2] + cam.cx;
            sy[i] = cam.fy * p[1] / p[2] + cam.cy;
            zinv[i] = 1.0 / p[2];
        }
        if behind {
            continue;
        }
        let orient = |ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64| -> f64 {
            (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        };
        let mut area = orient(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2]);
        if area == 0.0 {
            continue;
        }
        if area < 0.0 {
            sx.swap(1, 2);
            sy.swap(1, 2);
            zinv.swap(1, 2);
            area = -area;
        }
        // With the interior on the positive side of each directed edge, a
        // "top" edge runs rightward and a "left" edge runs upward in screen
        // space; pixels exactly on those edges belong to this triangle.
        let top_left = |ax: f64, ay: f64, bx: f64, by: f64| -> bool {
            (ay == by && bx > ax) || by < ay
        };
        let edges = [(1usize, 2usize), (2, 0), (0, 1)];
        let min_x = sx.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_x = (sx.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() as isize)
            .clamp(0, w as isize) as usize;
        let min_y = sy.iter().cloned().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_y = (sy.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() as isize)
            .clamp(0, h as isize) as usize;

        for py in min_y..max_y {
            for px in min_x..max_x {
                let pcx = px as f64 + 0.5;
                let pcy = py as f64 + 0.5;
                let mut bary = [0.0f64; 3];
                let mut inside = true;
                for (i, &(a, b)) in edges.iter().enumerate() {
                    let e = orient(sx[a], sy[a], sx[b], sy[b], pcx, pcy);
                    if e < 0.0 || (e == 0.0 && !top_left(sx[a], sy[a], sx[b], sy[b])) {
                        inside = false;
                        break;
                    }
                    bary[i] = e / area;
                }
                if !inside {
                    continue;
                }
                let zi = bary[0] * zinv[0] + bary[1] * zinv[1] + bary[2] * zinv[2];
                let z = 1.0 / zi;
                let cell = py * w + px;
                if z < depth[cell] {
                    depth[cell] = z;
                    tri_of[cell] = t as i64;
                }
            }
        }
    }
    (tri_of, depth)
}

/// Z-buffered index rendering: each covered pixel carries the face coordinate
/// of the nearest triangle, uncovered pixels stay null.
pub fn render_index_map(mesh: &CoordMesh, cam: &CameraPose) -> IndexMap {
    let (tri_of, depth) = rasterize(mesh, cam);
    let cells = tri_of
        .iter()
        .map(|&t| (t >= 0).then(|| mesh.face_coords[t as usize]))
        .collect();
    IndexMap { width: cam.width, height: cam.height, cells, depth }
}

/// Same rasterization, writing `(normal + 1) / 2` per covered pixel.
pub fn render_normal_image(mesh: &CoordMesh, cam: &CameraPose) -> RenderImage {
    let (tri_of, _) = rasterize(mesh, cam);
    let normals: Vec<[f64; 3]> = mesh
        .triangles
        .iter()
        .map(|tri| {
            let v0 = mesh.vertices[tri[0] as usize];
            let v1 = mesh.vertices[tri[1] as usize];
            let v2 = mesh.vertices[tri[2] as usize];
            let e1 = [v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]];
            let e2 = [v2[0] - v0[0], v2[1] - v0[1], v2[2] - v0[2]];
            normalize(cross(e1, e2))
        })
        .collect();
    let pixels = tri_of
        .iter()
        .map(|&t| {
            if t < 0 {
                [0.0; 3]
            } else {
                let n = normals[t as usize];
                [(n[0] + 1.0) / 2.0, (n[1] + 1.0) / 2.0, (n[2] + 1.0) / 2.0]
            }
        })
        .collect();
    RenderImage { width: cam.width, height: cam.height, pixels }
}

/// Per-patch mean 3D coordinate of the non-null pixels, with a null flag for
/// patches that saw only background.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageIndex {
    pub rows: usize,
    pub cols: usize,
    coords: Vec<[f64; 3]>,
    null: Vec<bool>,
}

impl ImageIndex {
    pub fn patch(&self, row: usize, col: usize) -> Option<[f64; 3]> {
        let i = row * self.cols + col;
        (!self.null[i]).then(|| self.coords[i])
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn null_flags(&self) -> &[bool] {
        &self.null
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Uniform coordinate shift on non-null patches. Diagnostic probe used to
    /// verify that attention actually reads the index rather than the pixels.
    pub fn shifted(&self, delta: [f64; 3]) -> ImageIndex {
        let coords = self
            .coords
            .iter()
            .zip(&self.null)
            .map(|(c, &n)| {
                if n {
                    *c
                } else {
                    [c[0] + delta[0], c[1] + delta[1], c[2] + delta[2]]
                }
            })
            .collect();
        ImageIndex { rows: self.rows, cols: self.cols, coords, null: self.null.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.coords.len() * 13);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for (c, n) in self.coords.iter().zip(&self.null) {
            for v in c {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out.push(*n as u8);
        }
        out
    }

    pub fn from_bytes(data: &[u8], origin: &Path) -> Result<Self> {
        if data.len() < 12 || &data[..4] != INDEX_MAGIC {
            return Err(Error::format(origin, "missing IIX1 magic"));
        }
        let rows = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
        let body = &data[12..];
        if body.len() != rows * cols * 13 {
            return Err(Error::format(
                origin,
                format!("expected {} patch bytes, found {}", rows * cols * 13, body.len()),
            ));
        }
        let mut coords = Vec::with_capacity(rows * cols);
        let mut null = Vec::with_capacity(rows * cols);
        for rec in body.chunks_exact(13) {
            let mut c = [0.0f64; 3];
            for (i, ch) in rec[..12].chunks_exact(4).enumerate() {
                c[i] = f32::from_le_bytes(ch.try_into().unwrap()) as f64;
            }
            match rec[12] {
                0 => null.push(false),
                1 => null.push(true),
                other => return Err(Error::format(origin, format!("bad null flag byte {other}"))),
            }
            coords.push(c);
        }
        Ok(ImageIndex { rows, cols, coords, null })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut data = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(|e| Error::io(path, e))?;
        ImageIndex::from_bytes(&data, path)
    }
}

/// Average-pool the non-null pixel coordinates of every `patch_size` square.
pub fn pool_image_index(map: &IndexMap, patch_size: usize) -> Result<ImageIndex> {
    if patch_size == 0 || map.width % patch_size != 0 || map.height % patch_size != 0 {
        return Err(Error::invalid(format!(
            "patch size {patch_size} does not divide image {}x{}",
            map.width, map.height
        )));
    }
    let rows = map.height / patch_size;
    let cols = map.width / patch_size;
    let mut coords = Vec::with_capacity(rows * cols);
    let mut null = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let mut sum = [0.0f64; 3];
            let mut n = 0usize;
            for dy in 0..patch_size {
                for dx in 0..patch_size {
                    if let Some(c) = map.cell(pc * patch_size + dx, pr * patch_size + dy) {
                        for i in 0..3 {
                            sum[i] += c[i] as f64;
                        }
                        n += 1;
                    }
                }
            }
            if n == 0 {
                coords.push([0.0; 3]);
                null.push(true);
            } else {
                coords.push([sum[0] / n as f64, sum[1] / n as f64, sum[2] / n as f64]);
                null.push(false);
            }
        }
    }
    Ok(ImageIndex { rows, cols, coords, null })
}
