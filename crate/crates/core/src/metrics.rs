//! Segmentation evaluation: Dice, relative volume error, average surface
//! distance, partial-volume-aware cross-sectional area (CSA) with vertebral
//! level selection, and cross-contrast CSA variability.
//!
//! Overlap metrics binarize both masks at a caller-chosen threshold
//! (>= counts as foreground). CSA is computed in the axial voxel plane
//! without centerline-angle correction; slices are indexed along the third
//! voxel axis.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::volume::{SoftMask, Volume3D};

fn check_grid(a: &Volume3D, b: &Volume3D) -> Result<()> {
    if !a.same_grid(b) {
        return Err(Error::InvalidArgument(format!(
            "masks live on different grids: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Dice coefficient on masks binarized at `threshold`. Two empty masks give
/// 1.0 by convention.
pub fn dice(pred: &SoftMask, gt: &SoftMask, threshold: f64) -> Result<f64> {
    check_grid(pred, gt)?;
    let mut inter = 0u64;
    let mut a = 0u64;
    let mut b = 0u64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let fp = p as f64 >= threshold;
        let fg = g as f64 >= threshold;
        a += fp as u64;
        b += fg as u64;
        inter += (fp && fg) as u64;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Signed relative volume error in percent; negative means
/// under-segmentation. The ground truth must be nonempty after
/// binarization.
pub fn relative_volume_error(pred: &SoftMask, gt: &SoftMask, threshold: f64) -> Result<f64> {
    check_grid(pred, gt)?;
    let count = |m: &SoftMask| {
        m.data()
            .iter()
            .filter(|&&x| x as f64 >= threshold)
            .count() as f64
    };
    let vg = count(gt);
    if vg == 0.0 {
        return Err(Error::UndefinedMetric(
            "relative volume error: ground truth empty after thresholding".into(),
        ));
    }
    let vp = count(pred);
    let (sx, sy, sz) = gt.spacing();
    let vox = sx * sy * sz;
    Ok(100.0 * (vp * vox - vg * vox) / (vg * vox))
}

/// Boundary voxels: foreground with at least one background 6-neighbour
/// (out-of-grid counts as background). Returned as voxel indices.
fn boundary_voxels(m: &SoftMask, threshold: f64) -> Vec<(usize, usize, usize)> {
    let (nx, ny, nz) = m.dims();
    let fg = |i: i64, j: i64, k: i64| -> bool {
        if i < 0 || j < 0 || k < 0 || i >= nx as i64 || j >= ny as i64 || k >= nz as i64 {
            return false;
        }
        m.at(i as usize, j as usize, k as usize) as f64 >= threshold
    };
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if !fg(i as i64, j as i64, k as i64) {
                    continue;
                }
                let (ii, jj, kk) = (i as i64, j as i64, k as i64);
                let edge = !fg(ii - 1, jj, kk)
                    || !fg(ii + 1, jj, kk)
                    || !fg(ii, jj - 1, kk)
                    || !fg(ii, jj + 1, kk)
                    || !fg(ii, jj, kk - 1)
                    || !fg(ii, jj, kk + 1);
                if edge {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}

fn directed_mean_distance(
    from: &[(usize, usize, usize)],
    to: &[(usize, usize, usize)],
    spacing: (f64, f64, f64),
) -> f64 {
    let mut total = 0.0;
    for &(ai, aj, ak) in from {
        let mut best = f64::INFINITY;
        for &(bi, bj, bk) in to {
            let dx = (ai as f64 - bi as f64) * spacing.0;
            let dy = (aj as f64 - bj as f64) * spacing.1;
            let dz = (ak as f64 - bk as f64) * spacing.2;
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 < best {
                best = d2;
            }
        }
        total += best.sqrt();
    }
    total / from.len() as f64
}

/// Symmetric average surface distance in mm: the mean of the two directed
/// mean boundary-to-boundary distances, spacing-aware, exact point-set
/// distances (no distance-transform approximation).
pub fn average_surface_distance(pred: &SoftMask, gt: &SoftMask, threshold: f64) -> Result<f64> {
    check_grid(pred, gt)?;
    let bp = boundary_voxels(pred, threshold);
    let bg = boundary_voxels(gt, threshold);
    if bp.is_empty() || bg.is_empty() {
        return Err(Error::UndefinedMetric(
            "average surface distance: a mask is empty after thresholding".into(),
        ));
    }
    let sp = gt.spacing();
    let d_pg = directed_mean_distance(&bp, &bg, sp);
    let d_gp = directed_mean_distance(&bg, &bp, sp);
    Ok(0.5 * (d_pg + d_gp))
}

/// Per-slice cross-sectional area with its vertebral level assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceArea {
    /// Axial slice index (third voxel axis).
    pub z: usize,
    /// Partial-volume-aware area: sum of soft values times in-plane voxel
    /// area.
    pub area_mm2: f64,
    /// Vertebral level at the slice's mask center of mass; None when the
    /// slice is empty or unlabeled (level 0).
    pub level: Option<i32>,
}

/// CSA of one mask: all slices plus the mean over the requested levels.
#[derive(Debug, Clone, PartialEq)]
pub struct CsaMeasurement {
    pub per_slice: Vec<SliceArea>,
    pub level_mean_mm2: f64,
}

/// Partial-volume-aware CSA. Each slice's area is the sum of soft values
/// times the in-plane voxel area; the slice's level is looked up in
/// `level_map` at the slice mask's center of mass (0 = unlabeled, excluded);
/// `level_mean_mm2` averages the slices whose level is in `levels`.
pub fn csa(mask: &SoftMask, level_map: &Volume3D, levels: &BTreeSet<i32>) -> Result<CsaMeasurement> {
    check_grid(mask, level_map)?;
    let (nx, ny, nz) = mask.dims();
    let (sx, sy, _) = mask.spacing();
    let pixel_area = sx * sy;

    let mut per_slice = Vec::with_capacity(nz);
    let mut selected = Vec::new();
    for k in 0..nz {
        let mut sum = 0.0f64;
        let mut wx = 0.0f64;
        let mut wy = 0.0f64;
        for j in 0..ny {
            for i in 0..nx {
                let v = mask.at(i, j, k) as f64;
                sum += v;
                wx += v * i as f64;
                wy += v * j as f64;
            }
        }
        let area = sum * pixel_area;
        let level = if sum > 0.0 {
            let ci = (wx / sum + 0.5).floor() as usize;
            let cj = (wy / sum + 0.5).floor() as usize;
            let l = level_map.at(ci.min(nx - 1), cj.min(ny - 1), k).round() as i32;
            if l == 0 {
                None
            } else {
                Some(l)
            }
        } else {
            None
        };
        if let Some(l) = level {
            if levels.contains(&l) {
                selected.push(area);
            }
        }
        per_slice.push(SliceArea {
            z: k,
            area_mm2: area,
            level,
        });
    }
    if selected.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no slice matches requested vertebral levels {levels:?}"
        )));
    }
    let level_mean_mm2 = selected.iter().sum::<f64>() / selected.len() as f64;
    Ok(CsaMeasurement {
        per_slice,
        level_mean_mm2,
    })
}

/// Per-slice and level-averaged CSA for a prediction, paired with the
/// ground-truth CSA and their absolute error.
#[derive(Debug, Clone, PartialEq)]
pub struct CsaReport {
    pub per_slice: Vec<SliceArea>,
    pub level_mean_mm2: f64,
    pub gt_csa_mm2: f64,
    pub pred_csa_mm2: f64,
    pub abs_error_mm2: f64,
}

impl CsaReport {
    pub fn from_measurements(pred: CsaMeasurement, gt: &CsaMeasurement) -> Self {
        let pred_csa = pred.level_mean_mm2;
        let gt_csa = gt.level_mean_mm2;
        CsaReport {
            per_slice: pred.per_slice,
            level_mean_mm2: pred_csa,
            gt_csa_mm2: gt_csa,
            pred_csa_mm2: pred_csa,
            abs_error_mm2: abs_csa_error(gt_csa, pred_csa),
        }
    }
}

/// Absolute CSA error |gt - pred| in mm^2.
pub fn abs_csa_error(gt_csa: f64, pred_csa: f64) -> f64 {
    (gt_csa - pred_csa).abs()
}

/// Per-participant CSA across contrasts.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastPanel {
    pub participant: String,
    pub csa_mm2: BTreeMap<String, f64>,
}

/// Standard deviation flavor for cross-contrast variability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StdFlavor {
    Population,
    Sample,
}

/// Population STD of the panel's CSA values; needs at least two contrasts.
pub fn std_csa(panel: &ContrastPanel) -> Result<f64> {
    std_csa_with(panel, StdFlavor::Population)
}

pub fn std_csa_with(panel: &ContrastPanel, flavor: StdFlavor) -> Result<f64> {
    let values: Vec<f64> = panel.csa_mm2.values().copied().collect();
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "std_csa needs at least 2 contrasts, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match flavor {
        StdFlavor::Population => n as f64,
        StdFlavor::Sample => (n - 1) as f64,
    };
    Ok((ss / denom).sqrt())
}
