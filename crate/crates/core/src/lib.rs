//! Contrast-agnostic soft-segmentation toolkit for spinal cord MRI.
//!
//! The crate covers everything around (not including) the segmentation
//! network itself:
//!
//! - `volume`: 3D volumes with reorientation, resampling, cropping,
//!   normalization and world-space sampling
//! - `nifti` / `manifest`: NIfTI-1 I/O (plain and gzip) and dataset manifests
//! - `registration`: slice-wise center-of-mass rigid registration with
//!   invertible per-slice warps
//! - `fusion`: FOV-weighted soft ground-truth averaging across contrasts
//! - `augment`: the stochastic augmentation stack, deterministic under a seed
//! - `loss`: NormReLU and adaptive wing loss kernels with analytic gradients
//! - `metrics` / `stats`: Dice, RVE, ASD, partial-volume-aware CSA, and the
//!   Wilcoxon/Bonferroni protocol
//! - `report`: CSV report schemas shared with the CLI

pub mod augment;
pub mod error;
pub mod fusion;
pub mod loss;
pub mod manifest;
pub mod metrics;
pub mod nifti;
pub mod registration;
pub mod report;
pub mod rng;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, Interp, Orientation, SoftMask, Volume3D};
