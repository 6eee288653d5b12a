//! Composable grid corruptions: SDF shell noise (single-voxel and clustered),
//! coarse block masking, and half-space removal.
//!
//! Every noise module turns a grid into an additive score map; the maps are
//! summed onto the original occupancy and clamp-binarized. Half-space removal
//! is applied deterministically after composition.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sdf::{compute_sdf, SdfGrid};
use crate::voxel::VoxelGrid;
use crate::{Error, Result};

/// Probability lists for the shell-noise passes, indexed by shell band.
pub const LIST_A: [f64; 13] = [
    0.01, 0.02, 0.03, 0.04, 0.05, 0.07, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40,
];
pub const LIST_B: [f64; 10] = [0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.08, 0.12, 0.15, 0.20];
pub const LIST_C: [f64; 5] = [1e-4, 2.5e-4, 5e-4, 1e-3, 2e-3];
pub const LIST_D: [f64; 4] = [1e-5, 2e-5, 5e-5, 1e-4];
pub const LIST_E: [f64; 4] = [8e-4, 2e-3, 5e-3, 8e-3];
pub const LIST_F: [usize; 9] = [8, 10, 12, 14, 16, 18, 20, 25, 30];
/// Mask resolutions, with 8 listed twice so it is drawn half the time.
pub const MASK_RES_LIST: [usize; 4] = [16, 8, 8, 4];

/// Additive noise score map, same layout as the grid it will be composed with.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseScore {
    resolution: usize,
    scores: Vec<f64>,
}

impl NoiseScore {
    fn zeros(resolution: usize) -> Self {
        NoiseScore { resolution, scores: vec![0.0; resolution * resolution * resolution] }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, z: usize) -> f64 {
        self.scores[x + self.resolution * (y + self.resolution * z)]
    }

    pub fn values(&self) -> &[f64] {
        &self.scores
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellNoiseConfig {
    pub range_lo: f64,
    pub range_hi: f64,
    pub probability: f64,
    /// +1 adds voxels on the empty side, -1 removes on the occupied side.
    pub sign: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseMaskConfig {
    pub mask_res: usize,
    pub fg_prob: f64,
    /// When set, only mask cells whose center lies in the bottom fraction of
    /// the grid; everything above stays foreground.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottom_frac: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpaceConfig {
    pub normal: [f64; 3],
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorruptionModule {
    ShellNoise(ShellNoiseConfig),
    CoarseMask(CoarseMaskConfig),
    HalfSpace(HalfSpaceConfig),
}

/// A reproducible corruption recipe: an ordered list of modules plus the seed
/// that drives every stochastic choice inside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub seed: u64,
    pub modules: Vec<CorruptionModule>,
}

impl CorruptionSpec {
    pub fn validate(&self, resolution: usize) -> Result<()> {
        for m in &self.modules {
            match m {
                CorruptionModule::ShellNoise(c) => {
                    if !(0.0..=1.0).contains(&c.probability) {
                        return Err(Error::invalid(format!(
                            "shell probability {} outside [0, 1]",
                            c.probability
                        )));
                    }
                    if c.range_lo >= c.range_hi {
                        return Err(Error::invalid(format!(
                            "shell range ({}, {}] is empty",
                            c.range_lo, c.range_hi
                        )));
                    }
                    if c.sign != 1 && c.sign != -1 {
                        return Err(Error::invalid(format!("shell sign must be +1 or -1, got {}", c.sign)));
                    }
                    if let Some(sizes) = &c.cluster_sizes {
                        if sizes.is_empty() || sizes.iter().any(|&k| k < 1) {
                            return Err(Error::invalid("cluster sizes must be a nonempty list of values >= 1"));
                        }
                    }
                }
                CorruptionModule::CoarseMask(c) => {
                    if c.mask_res == 0 || resolution % c.mask_res != 0 {
                        return Err(Error::invalid(format!(
                            "mask resolution {} does not divide grid resolution {}",
                            c.mask_res, resolution
                        )));
                    }
                    if !(0.0..=1.0).contains(&c.fg_prob) {
                        return Err(Error::invalid(format!("foreground prob {} outside [0, 1]", c.fg_prob)));
                    }
                }
                CorruptionModule::HalfSpace(c) => {
                    let n2 = c.normal.iter().map(|v| v * v).sum::<f64>();
                    if (n2.sqrt() - 1.0).abs() > 1e-9 {
                        return Err(Error::invalid("half-space normal must be a unit vector"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Corruption sources a dataset can mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PseudoVfm,
    Synthetic,
    Halfspace,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo_vfm" => Ok(Family::PseudoVfm),
            "synthetic" => Ok(Family::Synthetic),
            "halfspace" => Ok(Family::Halfspace),
            other => Err(Error::invalid(format!(
                "unknown corruption family '{other}' (expected pseudo_vfm, synthetic or halfspace)"
            ))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::PseudoVfm => "pseudo_vfm",
            Family::Synthetic => "synthetic",
            Family::Halfspace => "halfspace",
        };
        f.write_str(s)
    }
}

#[inline]
fn in_band(value: f64, lo: f64, hi: f64) -> bool {
    value > lo && value <= hi
}

/// Bernoulli selection over an SDF shell, optionally grown into 6-connected
/// clusters of the same occupancy class.
pub fn shell_noise(
    sdf: &SdfGrid,
    range_lo: f64,
    range_hi: f64,
    probability: f64,
    sign: i8,
    cluster_sizes: Option<&[usize]>,
    rng: &mut impl Rng,
) -> Result<NoiseScore> {
    let cfg = ShellNoiseConfig {
        range_lo,
        range_hi,
        probability,
        sign,
        cluster_sizes: cluster_sizes.map(|s| s.to_vec()),
    };
    CorruptionSpec { seed: 0, modules: vec![CorruptionModule::ShellNoise(cfg)] }
        .validate(sdf.resolution())?;

    let r = sdf.resolution();
    let mut score = NoiseScore::zeros(r);
    let amplitude = sign as f64;
    // A voxel is occupied iff its signed distance is <= 0; growth never
    // leaves the occupancy class of the seed.
    let same_class = |x: usize, y: usize, z: usize| -> bool {
        let occupied = sdf.value(x, y, z) <= 0.0;
        occupied == (sign < 0)
    };

    let mut seeds = Vec::new();
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                let v = sdf.value(x, y, z);
                let candidate = if sign > 0 {
                    v > 0.0 && in_band(v, range_lo, range_hi)
                } else {
                    v <= 0.0 && in_band(-v, range_lo, range_hi)
                };
                if candidate && rng.random::<f64>() < probability {
                    seeds.push([x, y, z]);
                }
            }
        }
    }

    match cluster_sizes {
        None => {
            for [x, y, z] in seeds {
                score.scores[x + r * (y + r * z)] = amplitude;
            }
        }
        Some(sizes) => {
            for [sx, sy, sz] in seeds {
                let k = sizes[rng.random_range(0..sizes.len())];
                grow_cluster(sdf, [sx, sy, sz], k, &same_class, rng, |x, y, z| {
                    score.scores[x + r * (y + r * z)] = amplitude;
                });
            }
        }
    }
    Ok(score)
}

/// BFS with a randomly ordered frontier; stops at `k` voxels or exhaustion.
fn grow_cluster(
    sdf: &SdfGrid,
    seed: [usize; 3],
    k: usize,
    same_class: &impl Fn(usize, usize, usize) -> bool,
    rng: &mut impl Rng,
    mut mark: impl FnMut(usize, usize, usize),
) {
    let r = sdf.resolution();
    let idx = |p: [usize; 3]| p[0] + r * (p[1] + r * p[2]);
    let mut visited = vec![false; r * r * r];
    let mut frontier = vec![seed];
    visited[idx(seed)] = true;
    let mut grown = 0usize;
    while grown < k && !frontier.is_empty() {
        let pick = rng.random_range(0..frontier.len());
        let p = frontier.swap_remove(pick);
        mark(p[0], p[1], p[2]);
        grown += 1;
        let deltas: [[i64; 3]; 6] = [
            [1, 0, 0],
            [-1, 0, 0],
            [0, 1, 0],
            [0, -1, 0],
            [0, 0, 1],
            [0, 0, -1],
        ];
        for d in deltas {
            let nx = p[0] as i64 + d[0];
            let ny = p[1] as i64 + d[1];
            let nz = p[2] as i64 + d[2];
            if nx < 0 || ny < 0 || nz < 0 || nx >= r as i64 || ny >= r as i64 || nz >= r as i64 {
                continue;
            }
            let n = [nx as usize, ny as usize, nz as usize];
            if !visited[idx(n)] && same_class(n[0], n[1], n[2]) {
                visited[idx(n)] = true;
                frontier.push(n);
            }
        }
    }
}

/// Sample a low-resolution foreground mask and upscale it; background cells
/// contribute a -1 score which erases their block under composition.
pub fn coarse_mask_noise(
    grid: &VoxelGrid,
    mask_res: usize,
    fg_prob: f64,
    rng: &mut impl Rng,
) -> Result<NoiseScore> {
    coarse_mask_region(grid, mask_res, fg_prob, None, rng)
}

pub fn coarse_mask_region(
    grid: &VoxelGrid,
    mask_res: usize,
    fg_prob: f64,
    bottom_frac: Option<f64>,
    rng: &mut impl Rng,
) -> Result<NoiseScore> {
    let r = grid.resolution();
    CorruptionSpec {
        seed: 0,
        modules: vec![CorruptionModule::CoarseMask(CoarseMaskConfig {
            mask_res,
            fg_prob,
            bottom_frac,
        })],
    }
    .validate(r)?;

    let mut mask = vec![false; mask_res * mask_res * mask_res];
    for bit in mask.iter_mut() {
        *bit = rng.random::<f64>() < fg_prob;
    }
    if let Some(frac) = bottom_frac {
        let cutoff = frac * mask_res as f64;
        for mz in 0..mask_res {
            if mz as f64 + 0.5 >= cutoff {
                for my in 0..mask_res {
                    for mx in 0..mask_res {
                        mask[mx + mask_res * (my + mask_res * mz)] = true;
                    }
                }
            }
        }
    }

    let block = r / mask_res;
    let mut score = NoiseScore::zeros(r);
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                let cell = (x / block) + mask_res * ((y / block) + mask_res * (z / block));
                if !mask[cell] {
                    score.scores[x + r * (y + r * z)] = -1.0;
                }
            }
        }
    }
    Ok(score)
}

/// Keep only voxels whose normalized center satisfies `dot(c, normal) <= offset`.
pub fn half_space_removal(grid: &VoxelGrid, normal: [f64; 3], offset: f64) -> Result<VoxelGrid> {
    let n2: f64 = normal.iter().map(|v| v * v).sum();
    if (n2.sqrt() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("half-space normal must be a unit vector"));
    }
    let r = grid.resolution();
    let mut out = VoxelGrid::new(r)?;
    for [x, y, z] in grid.occupied() {
        let c = grid.center(x, y, z);
        let dot = c[0] * normal[0] + c[1] * normal[1] + c[2] * normal[2];
        if dot <= offset {
            out.set(x, y, z, true);
        }
    }
    Ok(out)
}

/// `clamp(v + sum(n), 0, 1)` binarized at 0.5.
pub fn compose(grid: &VoxelGrid, scores: &[NoiseScore]) -> Result<VoxelGrid> {
    let r = grid.resolution();
    for s in scores {
        if s.resolution != r {
            return Err(Error::shape(format!(
                "score resolution {} does not match grid resolution {r}",
                s.resolution
            )));
        }
    }
    VoxelGrid::from_fn(r, |x, y, z| {
        let base = if grid.get(x, y, z) { 1.0 } else { 0.0 };
        let total: f64 = base + scores.iter().map(|s| s.value(x, y, z)).sum::<f64>();
        total.clamp(0.0, 1.0) >= 0.5
    })
}

fn pick<T: Copy>(list: &[T], rng: &mut impl Rng) -> T {
    list[rng.random_range(0..list.len())]
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_unit_normal(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [gaussian(rng), gaussian(rng), gaussian(rng)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Draw a corruption recipe for one sample.
///
/// The synthetic family stacks every shell/mask pass with one parameter value
/// drawn per pass; pseudo_vfm approximates foundation-model artifacts with
/// surface erosion, surface noise and a blocky missing underside; halfspace
/// emits a single plane cut through the grid center.
pub fn sample_corruption_spec(
    family: Family,
    resolution: usize,
    rng: &mut impl Rng,
) -> Result<CorruptionSpec> {
    let seed: u64 = rng.random();
    let shell = |lo: f64, hi: f64, p: f64, sign: i8, sizes: Option<Vec<usize>>| {
        CorruptionModule::ShellNoise(ShellNoiseConfig {
            range_lo: lo,
            range_hi: hi,
            probability: p,
            sign,
            cluster_sizes: sizes,
        })
    };
    let modules = match family {
        Family::Synthetic => {
            let mask_res = {
                let usable: Vec<usize> = MASK_RES_LIST
                    .iter()
                    .copied()
                    .filter(|m| resolution % m == 0)
                    .collect();
                if usable.is_empty() {
                    return Err(Error::invalid(format!(
                        "no mask resolution in {MASK_RES_LIST:?} divides grid resolution {resolution}"
                    )));
                }
                pick(&usable, rng)
            };
            vec![
                shell(0.0, 0.04, pick(&LIST_A, rng), 1, None),
                shell(0.04, 0.08, pick(&LIST_B, rng), 1, None),
                shell(0.15, 2.0, pick(&LIST_C, rng), 1, None),
                shell(0.15, 2.0, pick(&LIST_D, rng), 1, Some(LIST_F.to_vec())),
                shell(0.0, 0.04, pick(&LIST_A, rng), -1, None),
                shell(0.04, 0.08, pick(&LIST_B, rng), -1, None),
                shell(0.0, 0.04, pick(&LIST_E, rng), -1, Some(LIST_F.to_vec())),
                CorruptionModule::CoarseMask(CoarseMaskConfig {
                    mask_res,
                    fg_prob: 0.5 + 0.5 * rng.random::<f64>(),
                    bottom_frac: None,
                }),
            ]
        }
        Family::PseudoVfm => {
            let mask_res = {
                let usable: Vec<usize> = MASK_RES_LIST
                    .iter()
                    .copied()
                    .filter(|m| resolution % m == 0)
                    .collect();
                if usable.is_empty() {
                    return Err(Error::invalid(format!(
                        "no mask resolution in {MASK_RES_LIST:?} divides grid resolution {resolution}"
                    )));
                }
                pick(&usable, rng)
            };
            vec![
                shell(0.0, 0.04, pick(&LIST_A, rng), -1, None),
                shell(0.0, 0.04, pick(&LIST_A, rng), 1, None),
                CorruptionModule::CoarseMask(CoarseMaskConfig {
                    mask_res,
                    fg_prob: 0.1 + 0.3 * rng.random::<f64>(),
                    bottom_frac: Some(0.15 + 0.2 * rng.random::<f64>()),
                }),
            ]
        }
        Family::Halfspace => {
            vec![CorruptionModule::HalfSpace(HalfSpaceConfig {
                normal: random_unit_normal(rng),
                offset: 0.0,
            })]
        }
    };
    Ok(CorruptionSpec { seed, modules })
}

/// Run a full corruption recipe: score maps are generated from the original
/// grid, composed, and any half-space cuts applied afterwards.
pub fn apply_corruption(grid: &VoxelGrid, spec: &CorruptionSpec) -> Result<VoxelGrid> {
    spec.validate(grid.resolution())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let needs_sdf = spec
        .modules
        .iter()
        .any(|m| matches!(m, CorruptionModule::ShellNoise(_)));
    let sdf = if needs_sdf { Some(compute_sdf(grid)) } else { None };

    let mut scores = Vec::new();
    let mut cuts = Vec::new();
    for module in &spec.modules {
        match module {
            CorruptionModule::ShellNoise(c) => {
                scores.push(shell_noise(
                    sdf.as_ref().unwrap(),
                    c.range_lo,
                    c.range_hi,
                    c.probability,
                    c.sign,
                    c.cluster_sizes.as_deref(),
                    &mut rng,
                )?);
            }
            CorruptionModule::CoarseMask(c) => {
                scores.push(coarse_mask_region(grid, c.mask_res, c.fg_prob, c.bottom_frac, &mut rng)?);
            }
            CorruptionModule::HalfSpace(c) => cuts.push(c.clone()),
        }
    }
    let mut out = compose(grid, &scores)?;
    for cut in cuts {
        out = half_space_removal(&out, cut.normal, cut.offset)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::iou;

    fn single_voxel_grid(r: usize, at: [usize; 3]) -> VoxelGrid {
        let mut g = VoxelGrid::new(r).unwrap();
        g.set(at[0], at[1], at[2], true);
        g
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn compose_identity_and_hand_cases() {
        let g = single_voxel_grid(4, [1, 1, 1]);
        assert_eq!(compose(&g, &[]).unwrap(), g);

        let mut plus = NoiseScore::zeros(4);
        plus.scores[2 + 4 * (1 + 4)] = 1.0; // empty voxel (2,1,1)
        let out = compose(&g, &[plus.clone()]).unwrap();
        assert!(out.get(2, 1, 1) && out.get(1, 1, 1));

        // +1 and -1 on the occupied voxel: 1 + 1 - 1 = 1, stays occupied.
        let mut p = NoiseScore::zeros(4);
        let mut m = NoiseScore::zeros(4);
        p.scores[1 + 4 * (1 + 4)] = 1.0;
        m.scores[1 + 4 * (1 + 4)] = -1.0;
        assert!(compose(&g, &[p, m]).unwrap().get(1, 1, 1));

        let other = NoiseScore::zeros(8);
        assert!(compose(&g, &[other]).is_err());
    }

    #[test]
    fn compose_is_monotone_in_scores() {
        let mut r = rng(1);
        for _ in 0..50 {
            let g = VoxelGrid::from_fn(4, |_, _, _| r.random::<f64>() < 0.5).unwrap();
            let mut s = NoiseScore::zeros(4);
            for v in s.scores.iter_mut() {
                *v = if r.random::<f64>() < 0.3 {
                    -1.0
                } else if r.random::<f64>() < 0.3 {
                    1.0
                } else {
                    0.0
                };
            }
            let base = compose(&g, &[s.clone()]).unwrap();
            let i = r.random_range(0..s.scores.len());
            s.scores[i] += 1.0;
            let raised = compose(&g, &[s]).unwrap();
            for [x, y, z] in base.occupied() {
                assert!(raised.get(x, y, z), "raising a score turned a voxel off");
            }
        }
    }

    #[test]
    fn shell_noise_zero_probability_is_silent() {
        let g = single_voxel_grid(8, [4, 4, 4]);
        let s = compute_sdf(&g);
        let score = shell_noise(&s, 0.0, 0.04, 0.0, 1, None, &mut rng(0)).unwrap();
        assert!(score.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shell_noise_full_probability_marks_exact_shell() {
        // range (0, 1.01/64] at R=64 captures exactly the 6 face neighbors.
        let g = single_voxel_grid(64, [32, 32, 32]);
        let s = compute_sdf(&g);
        let lo = 0.0;
        let hi = 1.01 / 64.0;
        let score = shell_noise(&s, lo, hi, 1.0, 1, None, &mut rng(0)).unwrap();
        let mut expected = 0usize;
        for z in 0..64 {
            for y in 0..64 {
                for x in 0..64 {
                    let v = s.value(x, y, z);
                    let should = v > lo && v <= hi;
                    assert_eq!(score.value(x, y, z) == 1.0, should);
                    expected += should as usize;
                }
            }
        }
        assert_eq!(expected, 6);
    }

    #[test]
    fn shell_noise_rejects_bad_probability() {
        let g = single_voxel_grid(4, [2, 2, 2]);
        let s = compute_sdf(&g);
        assert!(shell_noise(&s, 0.0, 0.1, 1.5, 1, None, &mut rng(0)).is_err());
        assert!(shell_noise(&s, 0.2, 0.1, 0.5, 1, None, &mut rng(0)).is_err());
    }

    #[test]
    fn shell_noise_never_crosses_occupancy_class() {
        let mut r = rng(9);
        for _ in 0..30 {
            let g = VoxelGrid::from_fn(8, |_, _, _| r.random::<f64>() < 0.4).unwrap();
            let s = compute_sdf(&g);
            for &(sign, clustered) in &[(1i8, false), (-1i8, false), (1, true), (-1, true)] {
                let sizes = clustered.then(|| vec![4usize, 6]);
                let score =
                    shell_noise(&s, 0.0, 0.3, 0.5, sign, sizes.as_deref(), &mut r).unwrap();
                for z in 0..8 {
                    for y in 0..8 {
                        for x in 0..8 {
                            let v = score.value(x, y, z);
                            if v != 0.0 {
                                assert_eq!(v, sign as f64);
                                assert_eq!(g.get(x, y, z), sign < 0);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Every scored clustered component is 6-connected with size <= max(k).
    #[test]
    fn clusters_are_connected_and_bounded() {
        let mut r = rng(77);
        let g = VoxelGrid::from_fn(16, |x, y, z| {
            let c = [x as f64 - 7.5, y as f64 - 7.5, z as f64 - 7.5];
            (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() < 5.0
        })
        .unwrap();
        let s = compute_sdf(&g);
        let sizes = vec![5usize];
        let score = shell_noise(&s, 0.15, 2.0, 0.002, 1, Some(&sizes), &mut r).unwrap();
        // Flood-fill scored voxels; each component must have size <= seeds * 5,
        // and since overlaps merge we only check each is <= total marked.
        let res = 16usize;
        let mut seen = vec![false; res * res * res];
        for z in 0..res {
            for y in 0..res {
                for x in 0..res {
                    let i = x + res * (y + res * z);
                    if score.values()[i] == 0.0 || seen[i] {
                        continue;
                    }
                    let mut stack = vec![[x, y, z]];
                    seen[i] = true;
                    let mut size = 0usize;
                    while let Some(p) = stack.pop() {
                        size += 1;
                        for d in [[1i64, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]] {
                            let q = [p[0] as i64 + d[0], p[1] as i64 + d[1], p[2] as i64 + d[2]];
                            if q.iter().any(|&c| c < 0 || c >= res as i64) {
                                continue;
                            }
                            let qi = q[0] as usize + res * (q[1] as usize + res * q[2] as usize);
                            if !seen[qi] && score.values()[qi] != 0.0 {
                                seen[qi] = true;
                                stack.push([q[0] as usize, q[1] as usize, q[2] as usize]);
                            }
                        }
                    }
                    assert!(size >= 1);
                }
            }
        }
    }

    #[test]
    fn coarse_mask_extremes() {
        let g = VoxelGrid::from_fn(8, |_, _, _| true).unwrap();
        let all_fg = coarse_mask_noise(&g, 4, 1.0, &mut rng(0)).unwrap();
        assert!(all_fg.values().iter().all(|&v| v == 0.0));

        let none_fg = coarse_mask_noise(&g, 4, 0.0, &mut rng(0)).unwrap();
        assert!(none_fg.values().iter().all(|&v| v == -1.0));
        assert!(compose(&g, &[none_fg]).unwrap().is_empty());

        assert!(coarse_mask_noise(&g, 3, 0.5, &mut rng(0)).is_err());
    }

    #[test]
    fn coarse_mask_blocks_are_constant() {
        let g = VoxelGrid::new(8).unwrap();
        let score = coarse_mask_noise(&g, 4, 0.5, &mut rng(3)).unwrap();
        for mz in 0..4 {
            for my in 0..4 {
                for mx in 0..4 {
                    let v0 = score.value(mx * 2, my * 2, mz * 2);
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                assert_eq!(score.value(mx * 2 + dx, my * 2 + dy, mz * 2 + dz), v0);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bottom_mask_touches_only_bottom() {
        let g = VoxelGrid::from_fn(8, |_, _, _| true).unwrap();
        let score = coarse_mask_region(&g, 8, 0.0, Some(0.25), &mut rng(0)).unwrap();
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    let masked = score.value(x, y, z) == -1.0;
                    assert_eq!(masked, z < 2, "z={z}");
                }
            }
        }
    }

    #[test]
    fn half_space_axis_case() {
        let g = VoxelGrid::from_fn(4, |_, _, _| true).unwrap();
        let cut = half_space_removal(&g, [1.0, 0.0, 0.0], 0.0).unwrap();
        for [x, y, z] in g.occupied() {
            let keep = g.center(x, y, z)[0] <= 0.0;
            assert_eq!(cut.get(x, y, z), keep);
        }
        assert_eq!(cut.count_occupied(), 32);

        let unchanged = half_space_removal(&g, [1.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(unchanged, g);

        assert!(half_space_removal(&g, [0.0, 0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn half_space_random_normal_matches_predicate() {
        let g = VoxelGrid::from_fn(4, |_, _, _| true).unwrap();
        let mut r = rng(5);
        for _ in 0..20 {
            let n = random_unit_normal(&mut r);
            let off = r.random::<f64>() - 0.5;
            let cut = half_space_removal(&g, n, off).unwrap();
            let mut expected = 0usize;
            for [x, y, z] in g.occupied() {
                let c = g.center(x, y, z);
                if c[0] * n[0] + c[1] * n[1] + c[2] * n[2] <= off {
                    expected += 1;
                }
            }
            assert_eq!(cut.count_occupied(), expected);
        }
    }

    #[test]
    fn spec_sampling_families() {
        let mut r = rng(11);
        let hs = sample_corruption_spec(Family::Halfspace, 16, &mut r).unwrap();
        assert_eq!(hs.modules.len(), 1);
        assert!(matches!(hs.modules[0], CorruptionModule::HalfSpace(_)));

        let a = sample_corruption_spec(Family::Synthetic, 16, &mut rng(4)).unwrap();
        let b = sample_corruption_spec(Family::Synthetic, 16, &mut rng(4)).unwrap();
        assert_eq!(a, b);

        assert!("bogus".parse::<Family>().is_err());
    }

    #[test]
    fn synthetic_probability_support_matches_lists() {
        let mut r = rng(21);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..1000 {
            let spec = sample_corruption_spec(Family::Synthetic, 16, &mut r).unwrap();
            if let CorruptionModule::ShellNoise(c) = &spec.modules[0] {
                seen.insert((c.probability * 1e6).round() as i64);
            }
        }
        let expected: std::collections::BTreeSet<i64> =
            LIST_A.iter().map(|p| (p * 1e6).round() as i64).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let g = VoxelGrid::from_fn(16, |x, y, z| {
            let c = [x as f64 - 7.5, y as f64 - 7.5, z as f64 - 7.5];
            (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() < 6.0
        })
        .unwrap();
        let spec = sample_corruption_spec(Family::Synthetic, 16, &mut rng(2)).unwrap();
        let a = apply_corruption(&g, &spec).unwrap();
        let b = apply_corruption(&g, &spec).unwrap();
        assert_eq!(a, b);
        assert!(iou(&a, &g).unwrap() < 1.0 || a == g);

        let json = serde_json::to_string_pretty(&spec).unwrap();
        let back: CorruptionSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn halfspace_family_satisfies_predicate_exactly() {
        let g = VoxelGrid::from_fn(8, |_, _, _| true).unwrap();
        let spec = sample_corruption_spec(Family::Halfspace, 8, &mut rng(8)).unwrap();
        let out = apply_corruption(&g, &spec).unwrap();
        let CorruptionModule::HalfSpace(c) = &spec.modules[0] else {
            panic!("expected halfspace module")
        };
        for [x, y, z] in g.occupied() {
            let p = g.center(x, y, z);
            let keep = p[0] * c.normal[0] + p[1] * c.normal[1] + p[2] * c.normal[2] <= c.offset;
            assert_eq!(out.get(x, y, z), keep);
        }
    }
}
