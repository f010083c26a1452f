//! Slice-by-slice center-of-mass rigid registration between masks, with
//! invertible per-slice warps.
//!
//! Each axial (third-axis) slice gets an in-plane rigid transform
//! `p -> R(rot) * (p - c) + c + t` in millimetres, where `c` is the source
//! slice's center of mass (stored per slice so warps are reproducible on any
//! volume sharing the grid). Translation follows the damped center-of-mass
//! update `t += step * (com_tgt - com_warped)`; rotation is estimated from
//! the principal axes of the second central moments with the same damping,
//! the 180-degree axis ambiguity resolved toward the smaller rotation.
//! Slices with an empty mask on either side are interpolated linearly from
//! their nearest estimated neighbours (constant at the ends) and flagged.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{interp_voxel, Boundary, Interp, Volume3D};

/// In-plane rigid transform of one axial slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceTransform {
    pub tx_mm: f64,
    pub ty_mm: f64,
    pub rot_deg: f64,
    /// Rotation center (mm): the source slice's center of mass.
    pub center_mm: (f64, f64),
    /// True when this slice was not estimated but interpolated/extrapolated.
    pub empty: bool,
}

impl SliceTransform {
    pub fn identity() -> Self {
        SliceTransform {
            tx_mm: 0.0,
            ty_mm: 0.0,
            rot_deg: 0.0,
            center_mm: (0.0, 0.0),
            empty: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.tx_mm == 0.0 && self.ty_mm == 0.0 && self.rot_deg == 0.0
    }

    /// Rigid inverse about the same center: negate the rotation,
    /// counter-rotate and negate the translation.
    pub fn inverse(&self) -> Self {
        let r = -self.rot_deg.to_radians();
        let (s, c) = r.sin_cos();
        SliceTransform {
            tx_mm: -(c * self.tx_mm - s * self.ty_mm),
            ty_mm: -(s * self.tx_mm + c * self.ty_mm),
            rot_deg: -self.rot_deg,
            center_mm: self.center_mm,
            empty: self.empty,
        }
    }

    /// Apply `self` first, then `other`; both must share a rotation center.
    pub fn compose(&self, other: &SliceTransform) -> Result<Self> {
        if (self.center_mm.0 - other.center_mm.0).abs() > 1e-9
            || (self.center_mm.1 - other.center_mm.1).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(
                "cannot compose slice transforms about different centers".into(),
            ));
        }
        let r = other.rot_deg.to_radians();
        let (s, c) = r.sin_cos();
        Ok(SliceTransform {
            tx_mm: c * self.tx_mm - s * self.ty_mm + other.tx_mm,
            ty_mm: s * self.tx_mm + c * self.ty_mm + other.ty_mm,
            rot_deg: self.rot_deg + other.rot_deg,
            center_mm: self.center_mm,
            empty: self.empty || other.empty,
        })
    }

    /// Forward map of an in-plane point (mm).
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        if self.rot_deg == 0.0 {
            return (x + self.tx_mm, y + self.ty_mm);
        }
        let r = self.rot_deg.to_radians();
        let (s, c) = r.sin_cos();
        let dx = x - self.center_mm.0;
        let dy = y - self.center_mm.1;
        (
            c * dx - s * dy + self.center_mm.0 + self.tx_mm,
            s * dx + c * dy + self.center_mm.1 + self.ty_mm,
        )
    }
}

/// Per-axial-slice rigid transforms over a fixed reference grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTransformStack {
    pub slices: Vec<SliceTransform>,
    pub reference_dims: (usize, usize, usize),
    pub reference_spacing: (f64, f64, f64),
}

impl SliceTransformStack {
    pub fn identity(reference: &Volume3D) -> Self {
        SliceTransformStack {
            slices: vec![SliceTransform::identity(); reference.dims().2],
            reference_dims: reference.dims(),
            reference_spacing: reference.spacing(),
        }
    }

    pub fn matches_grid(&self, v: &Volume3D) -> bool {
        let sp = v.spacing();
        v.dims() == self.reference_dims
            && (sp.0 - self.reference_spacing.0).abs() < 1e-9
            && (sp.1 - self.reference_spacing.1).abs() < 1e-9
            && (sp.2 - self.reference_spacing.2).abs() < 1e-9
    }

    /// Serialize as CSV: `z,tx_mm,ty_mm,rot_deg,empty,cx_mm,cy_mm`.
    pub fn to_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "z,tx_mm,ty_mm,rot_deg,empty,cx_mm,cy_mm")?;
        for (z, s) in self.slices.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                z,
                s.tx_mm,
                s.ty_mm,
                s.rot_deg,
                s.empty as u8,
                s.center_mm.0,
                s.center_mm.1
            )?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Parse the CSV form back over a known reference grid.
    pub fn from_csv(
        reader: impl BufRead,
        reference_dims: (usize, usize, usize),
        reference_spacing: (f64, f64, f64),
    ) -> Result<Self> {
        let mut slices = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Format(format!("warp csv line {lineno}: {e}")))?;
            if lineno == 0 {
                if line.trim() != "z,tx_mm,ty_mm,rot_deg,empty,cx_mm,cy_mm" {
                    return Err(Error::Format(format!("unexpected warp csv header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::Format(format!(
                    "warp csv line {lineno}: expected 7 fields, got {}",
                    fields.len()
                )));
            }
            let num = |i: usize| -> Result<f64> {
                fields[i]
                    .trim()
                    .parse()
                    .map_err(|e| Error::Format(format!("warp csv line {lineno}: {e}")))
            };
            slices.push(SliceTransform {
                tx_mm: num(1)?,
                ty_mm: num(2)?,
                rot_deg: num(3)?,
                empty: num(4)? != 0.0,
                center_mm: (num(5)?, num(6)?),
            });
        }
        if slices.len() != reference_dims.2 {
            return Err(Error::Format(format!(
                "warp csv has {} slices but the reference grid has {}",
                slices.len(),
                reference_dims.2
            )));
        }
        Ok(SliceTransformStack {
            slices,
            reference_dims,
            reference_spacing,
        })
    }

    /// Per-slice rigid inverse.
    pub fn invert(&self) -> Self {
        SliceTransformStack {
            slices: self.slices.iter().map(|s| s.inverse()).collect(),
            reference_dims: self.reference_dims,
            reference_spacing: self.reference_spacing,
        }
    }

    /// Slice-wise composition (`self` applied first).
    pub fn compose(&self, other: &SliceTransformStack) -> Result<Self> {
        if self.reference_dims != other.reference_dims {
            return Err(Error::InvalidArgument(
                "cannot compose stacks over different reference grids".into(),
            ));
        }
        let slices = self
            .slices
            .iter()
            .zip(&other.slices)
            .map(|(a, b)| a.compose(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(SliceTransformStack {
            slices,
            reference_dims: self.reference_dims,
            reference_spacing: self.reference_spacing,
        })
    }
}

/// Weighted in-plane moments of one slice.
struct SliceMoments {
    weight: f64,
    voxels: usize,
    com: (f64, f64),
    mu20: f64,
    mu02: f64,
    mu11: f64,
}

fn slice_moments(v: &Volume3D, z: usize) -> SliceMoments {
    let (nx, ny, _) = v.dims();
    let (sx, sy, _) = v.spacing();
    let mut weight = 0.0;
    let mut voxels = 0usize;
    let mut wx = 0.0;
    let mut wy = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let w = v.at(i, j, z) as f64;
            if w > 0.0 {
                voxels += 1;
                weight += w;
                wx += w * i as f64 * sx;
                wy += w * j as f64 * sy;
            }
        }
    }
    if weight == 0.0 {
        return SliceMoments {
            weight,
            voxels,
            com: (0.0, 0.0),
            mu20: 0.0,
            mu02: 0.0,
            mu11: 0.0,
        };
    }
    let com = (wx / weight, wy / weight);
    let mut mu20 = 0.0;
    let mut mu02 = 0.0;
    let mut mu11 = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let w = v.at(i, j, z) as f64;
            if w > 0.0 {
                let dx = i as f64 * sx - com.0;
                let dy = j as f64 * sy - com.1;
                mu20 += w * dx * dx;
                mu02 += w * dy * dy;
                mu11 += w * dx * dy;
            }
        }
    }
    SliceMoments {
        weight,
        voxels,
        com,
        mu20: mu20 / weight,
        mu02: mu02 / weight,
        mu11: mu11 / weight,
    }
}

/// Principal-axis angle in degrees, in (-90, 90].
fn principal_angle_deg(m: &SliceMoments) -> f64 {
    0.5 * (2.0 * m.mu11).atan2(m.mu20 - m.mu02).to_degrees()
}

/// Moment anisotropy in [0, 1]; near-zero means the axis is undefined.
fn anisotropy(m: &SliceMoments) -> f64 {
    let num = ((m.mu20 - m.mu02).powi(2) + 4.0 * m.mu11 * m.mu11).sqrt();
    let den = m.mu20 + m.mu02;
    if den <= 0.0 {
        0.0
    } else {
        num / den
    }
}

fn wrap_pm90(mut deg: f64) -> f64 {
    while deg > 90.0 {
        deg -= 180.0;
    }
    while deg <= -90.0 {
        deg += 180.0;
    }
    deg
}

/// Minimum slice mask size for rotation estimation; below it (or for
/// near-isotropic masks) the slice is translation-only.
const MIN_ROTATION_VOXELS: usize = 3;
const MIN_ANISOTROPY: f64 = 0.05;

/// Register `src` onto `tgt` slice by slice; both must already share the
/// target grid. Returns the stack plus the mean center-of-mass residual (mm)
/// after each iteration, for convergence diagnostics.
pub fn register_com_trace(
    src: &Volume3D,
    tgt: &Volume3D,
    iterations: usize,
    step: f64,
) -> Result<(SliceTransformStack, Vec<f64>)> {
    if !src.same_grid(tgt) {
        return Err(Error::InvalidArgument(
            "register_com: source and target must share the target grid".into(),
        ));
    }
    let nz = src.dims().2;
    let mut estimated: Vec<Option<SliceTransform>> = vec![None; nz];
    let mut residuals = vec![0.0f64; iterations];
    let mut any_src = false;
    let mut any_tgt = false;
    let mut estimated_count = 0usize;

    for z in 0..nz {
        let ms = slice_moments(src, z);
        let mt = slice_moments(tgt, z);
        any_src |= ms.weight > 0.0;
        any_tgt |= mt.weight > 0.0;
        if ms.weight == 0.0 || mt.weight == 0.0 {
            continue;
        }
        let rotate = ms.voxels >= MIN_ROTATION_VOXELS
            && mt.voxels >= MIN_ROTATION_VOXELS
            && anisotropy(&ms) >= MIN_ANISOTROPY
            && anisotropy(&mt) >= MIN_ANISOTROPY;
        let angle_src = principal_angle_deg(&ms);
        let angle_tgt = principal_angle_deg(&mt);

        // Rotation about the source com keeps the warped com at
        // com_src + t, so both updates have closed forms per iteration.
        let mut tx = 0.0;
        let mut ty = 0.0;
        let mut rot = 0.0;
        for it in 0..iterations {
            tx += step * (mt.com.0 - ms.com.0 - tx);
            ty += step * (mt.com.1 - ms.com.1 - ty);
            if rotate {
                rot += step * wrap_pm90(angle_tgt - angle_src - rot);
            }
            let rx = mt.com.0 - ms.com.0 - tx;
            let ry = mt.com.1 - ms.com.1 - ty;
            residuals[it] += (rx * rx + ry * ry).sqrt();
        }
        estimated_count += 1;
        estimated[z] = Some(SliceTransform {
            tx_mm: tx,
            ty_mm: ty,
            rot_deg: rot,
            center_mm: ms.com,
            empty: false,
        });
    }

    if !any_src || !any_tgt {
        return Err(Error::NoOverlap(
            "all slices are empty in the source or target mask".into(),
        ));
    }
    for r in residuals.iter_mut() {
        *r /= estimated_count.max(1) as f64;
    }

    // Fill unestimated slices by linear interpolation in z between the
    // nearest estimated neighbours, constant beyond the ends.
    let known: Vec<usize> = (0..nz).filter(|&z| estimated[z].is_some()).collect();
    let mut slices = Vec::with_capacity(nz);
    for z in 0..nz {
        if let Some(t) = estimated[z] {
            slices.push(t);
            continue;
        }
        let below = known.iter().rev().find(|&&k| k < z).copied();
        let above = known.iter().find(|&&k| k > z).copied();
        let t = match (below, above) {
            (Some(b), Some(a)) => {
                let w = (z - b) as f64 / (a - b) as f64;
                let tb = estimated[b].unwrap();
                let ta = estimated[a].unwrap();
                let mix = |x: f64, y: f64| x + w * (y - x);
                SliceTransform {
                    tx_mm: mix(tb.tx_mm, ta.tx_mm),
                    ty_mm: mix(tb.ty_mm, ta.ty_mm),
                    rot_deg: mix(tb.rot_deg, ta.rot_deg),
                    center_mm: (
                        mix(tb.center_mm.0, ta.center_mm.0),
                        mix(tb.center_mm.1, ta.center_mm.1),
                    ),
                    empty: true,
                }
            }
            (Some(b), None) => SliceTransform {
                empty: true,
                ..estimated[b].unwrap()
            },
            (None, Some(a)) => SliceTransform {
                empty: true,
                ..estimated[a].unwrap()
            },
            (None, None) => unreachable!("at least one slice was estimated"),
        };
        slices.push(t);
    }

    Ok((
        SliceTransformStack {
            slices,
            reference_dims: src.dims(),
            reference_spacing: src.spacing(),
        },
        residuals,
    ))
}

/// Slice-wise center-of-mass registration with the default convergence
/// schedule of 10 iterations at step 0.5.
pub fn register_com(
    src: &Volume3D,
    tgt: &Volume3D,
    iterations: usize,
    step: f64,
) -> Result<SliceTransformStack> {
    register_com_trace(src, tgt, iterations, step).map(|(stack, _)| stack)
}

/// Bilinear/nearest sample within one slice, zero outside the grid.
fn sample_slice(v: &Volume3D, fx: f64, fy: f64, z: usize, scheme: Interp) -> f64 {
    match scheme {
        Interp::Nearest => {
            let i = (fx + 0.5).floor() as i64;
            let j = (fy + 0.5).floor() as i64;
            let (nx, ny, _) = v.dims();
            if i < 0 || j < 0 || i >= nx as i64 || j >= ny as i64 {
                0.0
            } else {
                v.at(i as usize, j as usize, z) as f64
            }
        }
        // Within a slice the 3D kernel never crosses z: pass the slice's own
        // z as an integer coordinate.
        _ => interp_voxel(v, fx, fy, z as f64, Interp::Linear, Boundary::Zero),
    }
}

/// Resample `v` through the stack onto the reference grid (inverse-mapped,
/// per slice). Identity slices are copied untouched.
pub fn apply_warp(v: &Volume3D, w: &SliceTransformStack, scheme: Interp) -> Result<Volume3D> {
    if !w.matches_grid(v) {
        return Err(Error::InvalidArgument(format!(
            "apply_warp: volume grid {:?} does not match the warp's reference grid {:?}",
            v.dims(),
            w.reference_dims
        )));
    }
    let (nx, ny, nz) = v.dims();
    let (sx, sy, _) = v.spacing();
    let mut out = vec![0.0f32; nx * ny * nz];
    for z in 0..nz {
        let t = &w.slices[z];
        if t.is_identity() {
            for j in 0..ny {
                for i in 0..nx {
                    out[i + nx * (j + ny * z)] = v.at(i, j, z);
                }
            }
            continue;
        }
        let inv = t.inverse();
        for j in 0..ny {
            for i in 0..nx {
                let (px, py) = inv.apply(i as f64 * sx, j as f64 * sy);
                out[i + nx * (j + ny * z)] =
                    sample_slice(v, px / sx, py / sy, z, scheme) as f32;
            }
        }
    }
    v.with_data(out)
}

/// Per-slice rigid inverse of a stack.
pub fn invert(w: &SliceTransformStack) -> SliceTransformStack {
    w.invert()
}
