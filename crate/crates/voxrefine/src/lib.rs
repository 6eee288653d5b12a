//! Multi-view conditioned voxel refinement.
//!
//! The pipeline takes a corrupted occupancy grid plus a handful of calibrated
//! views rendered from it, and learns to recover the clean grid:
//!
//! 1. [`voxel`] — bit-packed occupancy grids, surface triangulation, and the
//!    IoU / Chamfer evaluation metrics.
//! 2. [`sdf`] / [`corrupt`] — exact signed distance fields and the composable
//!    corruption modules (shell noise, clustered noise, coarse masking,
//!    half-space removal) used to synthesize training pairs.
//! 3. [`render`] — a deterministic software rasterizer that draws the noisy
//!    grid with voxel coordinates as face colors, and pools the result into a
//!    per-patch image index: the 3D lookup key for every image token.
//! 4. [`views`] — k-means selection of diverse camera viewpoints.
//! 5. [`num`] — a small f64 tensor core with reverse-mode differentiation and
//!    a finite-difference gradient checker.
//! 6. [`model`] — the hybrid dual/single-stream transformer with 3D rotary
//!    position grounding, trained to predict the latent correction velocity.
//! 7. [`flow`] — the linear correction path, fixed-step ODE integration, and
//!    end-to-end refinement.
//! 8. [`data`] — procedural shapes, sample synthesis, and on-disk formats.
//! 9. [`cli`] — the `voxrefine` command-line surface.

pub mod cli;
pub mod corrupt;
pub mod data;
mod error;
pub mod flow;
pub mod model;
pub mod num;
pub mod render;
pub mod sdf;
pub mod views;
pub mod voxel;

pub use error::{Error, Result};
