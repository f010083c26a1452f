//! Stochastic augmentation stack for (image, soft label) pairs, applied in a
//! fixed order with per-transform probability gates, deterministic under a
//! seed.
//!
//! Order: affine, elastic deformation, low-resolution simulation, gamma
//! correction, bias field, Gaussian noise, Gaussian smoothing, intensity
//! scaling, mirroring, then mandatory z-score normalization of the image.
//! Spatial transforms resample the image with cubic and the label with
//! linear interpolation; the label is never re-binarized and is clamped to
//! [0, 1] at the end. Intensity transforms touch the image only;
//! low-resolution simulation degrades the image only.
//!
//! Draw order (one [`DrawRng`] stream per invocation): every transform
//! consumes exactly one gate draw whether or not it fires; a firing
//! transform then consumes its parameter draws:
//! affine 9 (rotation x/y/z, scale x/y/z, translation x/y/z), elastic
//! 2 + 3 per control node (magnitude, smoothing, then node offsets
//! node-major x/y/z), low-res 1, gamma 1, bias field 19 (graded
//! lexicographic coefficient order), noise 1 + 2 per voxel, smoothing 3,
//! intensity scale 1, mirror 3 (one coin per axis).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::DrawRng;
use crate::volume::{
    interp_voxel, resample_to_dims, znormalize, Boundary, Interp, SoftMask, Volume3D,
};

/// Probability plus an inclusive parameter range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RangedProb {
    pub probability: f64,
    pub range: (f64, f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AffineCfg {
    pub probability: f64,
    /// Per-axis rotation in degrees.
    pub rotate_deg: (f64, f64),
    /// Per-axis scale offset; the factor applied is 1 + s.
    pub scale: (f64, f64),
    /// Per-axis translation as a fraction of the axis length.
    pub translate_frac: (f64, f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ElasticCfg {
    pub probability: f64,
    /// Offset bound (voxels) at the coarse grid nodes.
    pub magnitude: (f64, f64),
    /// Gaussian smoothing STD over the node grid.
    pub sigma: (f64, f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct IntensityScaleCfg {
    pub probability: f64,
    pub scale: (f64, f64),
    /// When false (default) the image is multiplied by 1 + s; when true the
    /// drawn value is used as the raw multiplier.
    pub raw_multiplier: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MirrorCfg {
    pub probability: f64,
}

/// The full augmentation configuration; `Default` reproduces the training
/// stack: affine p=0.9 (rotation ±20°, scale ±0.2, translation ±0.1·dim),
/// elastic p=0.5 (offsets 25–35, smoothing 3.5–5.5), low-res p=0.25
/// (factor 0.5–1), gamma p=0.5 (0.5–3), bias field p=0.3 (0–0.5), noise
/// p=0.1 (STD 0–0.1), smoothing p=0.3 (STD 0–2), intensity scale p=0.15
/// (−0.25–1), mirror p=0.3.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AugmentConfig {
    pub seed: u64,
    pub affine: AffineCfg,
    pub elastic: ElasticCfg,
    pub low_res: RangedProb,
    pub gamma: RangedProb,
    pub bias_field: RangedProb,
    pub noise: RangedProb,
    pub smooth: RangedProb,
    pub intensity_scale: IntensityScaleCfg,
    pub mirror: MirrorCfg,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            seed: 42,
            affine: AffineCfg {
                probability: 0.9,
                rotate_deg: (-20.0, 20.0),
                scale: (-0.2, 0.2),
                translate_frac: (-0.1, 0.1),
            },
            elastic: ElasticCfg {
                probability: 0.5,
                magnitude: (25.0, 35.0),
                sigma: (3.5, 5.5),
            },
            low_res: RangedProb {
                probability: 0.25,
                range: (0.5, 1.0),
            },
            gamma: RangedProb {
                probability: 0.5,
                range: (0.5, 3.0),
            },
            bias_field: RangedProb {
                probability: 0.3,
                range: (0.0, 0.5),
            },
            noise: RangedProb {
                probability: 0.1,
                range: (0.0, 0.1),
            },
            smooth: RangedProb {
                probability: 0.3,
                range: (0.0, 2.0),
            },
            intensity_scale: IntensityScaleCfg {
                probability: 0.15,
                scale: (-0.25, 1.0),
                raw_multiplier: false,
            },
            mirror: MirrorCfg { probability: 0.3 },
        }
    }
}

impl AugmentConfig {
    /// Zero every probability, keeping ranges; the pipeline then only
    /// z-normalizes the image.
    pub fn all_off(seed: u64) -> Self {
        let mut cfg = AugmentConfig {
            seed,
            ..Default::default()
        };
        cfg.affine.probability = 0.0;
        cfg.elastic.probability = 0.0;
        cfg.low_res.probability = 0.0;
        cfg.gamma.probability = 0.0;
        cfg.bias_field.probability = 0.0;
        cfg.noise.probability = 0.0;
        cfg.smooth.probability = 0.0;
        cfg.intensity_scale.probability = 0.0;
        cfg.mirror.probability = 0.0;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("affine", self.affine.probability),
            ("elastic", self.elastic.probability),
            ("low_res", self.low_res.probability),
            ("gamma", self.gamma.probability),
            ("bias_field", self.bias_field.probability),
            ("noise", self.noise.probability),
            ("smooth", self.smooth.probability),
            ("intensity_scale", self.intensity_scale.probability),
            ("mirror", self.mirror.probability),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "{name} probability {p} outside [0, 1]"
                )));
            }
        }
        let ranges = [
            ("affine.rotate_deg", self.affine.rotate_deg),
            ("affine.scale", self.affine.scale),
            ("affine.translate_frac", self.affine.translate_frac),
            ("elastic.magnitude", self.elastic.magnitude),
            ("elastic.sigma", self.elastic.sigma),
            ("low_res", self.low_res.range),
            ("gamma", self.gamma.range),
            ("bias_field", self.bias_field.range),
            ("noise", self.noise.range),
            ("smooth", self.smooth.range),
            ("intensity_scale", self.intensity_scale.scale),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "{name} range ({lo}, {hi}) has low > high"
                )));
            }
        }
        if self.low_res.range.0 <= 0.0 {
            return Err(Error::InvalidArgument(
                "low_res factors must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: AugmentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Validation(format!("augment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// An image with its aligned soft label.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub image: Volume3D,
    pub label: SoftMask,
}

impl SamplePair {
    pub fn new(image: Volume3D, label: SoftMask) -> Result<Self> {
        if !image.same_grid(label.volume()) {
            return Err(Error::InvalidArgument(
                "image and label must share a grid".into(),
            ));
        }
        Ok(SamplePair { image, label })
    }
}

// ---------------------------------------------------------------------------
// Spatial transforms
// ---------------------------------------------------------------------------

/// Pull-resample through a dense voxel-space map `out(idx) = v(map(idx))`.
fn warp_by<F>(v: &Volume3D, scheme: Interp, boundary: Boundary, map: F) -> Volume3D
where
    F: Fn(f64, f64, f64) -> (f64, f64, f64),
{
    let (nx, ny, nz) = v.dims();
    let mut data = vec![0.0f32; nx * ny * nz];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let (fx, fy, fz) = map(i as f64, j as f64, k as f64);
                data[i + nx * (j + ny * k)] =
                    interp_voxel(v, fx, fy, fz, scheme, boundary) as f32;
            }
        }
    }
    v.with_data(data).expect("same-length buffer")
}

fn rotation_matrix(rx: f64, ry: f64, rz: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = rx.to_radians().sin_cos();
    let (sy, cy) = ry.to_radians().sin_cos();
    let (sz, cz) = rz.to_radians().sin_cos();
    // Rz * Ry * Rx
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
        ],
    ]
}

/// Random affine about the volume center: per-axis rotation, scale 1+s and
/// translation in voxels (fraction of the axis length). Inverse-mapped;
/// image cubic, label linear, zero outside.
pub fn random_affine(
    v: &Volume3D,
    label: &SoftMask,
    cfg: &AffineCfg,
    rng: &mut DrawRng,
) -> (Volume3D, SoftMask) {
    let rx = rng.range(cfg.rotate_deg.0, cfg.rotate_deg.1);
    let ry = rng.range(cfg.rotate_deg.0, cfg.rotate_deg.1);
    let rz = rng.range(cfg.rotate_deg.0, cfg.rotate_deg.1);
    let sx = 1.0 + rng.range(cfg.scale.0, cfg.scale.1);
    let sy = 1.0 + rng.range(cfg.scale.0, cfg.scale.1);
    let sz = 1.0 + rng.range(cfg.scale.0, cfg.scale.1);
    let (nx, ny, nz) = v.dims();
    let tx = rng.range(cfg.translate_frac.0, cfg.translate_frac.1) * nx as f64;
    let ty = rng.range(cfg.translate_frac.0, cfg.translate_frac.1) * ny as f64;
    let tz = rng.range(cfg.translate_frac.0, cfg.translate_frac.1) * nz as f64;
    apply_affine(v, label, (rx, ry, rz), (sx, sy, sz), (tx, ty, tz))
}

/// Deterministic core of the affine transform (exposed for tests).
pub fn apply_affine(
    v: &Volume3D,
    label: &SoftMask,
    rotate_deg: (f64, f64, f64),
    scale: (f64, f64, f64),
    translate_vox: (f64, f64, f64),
) -> (Volume3D, SoftMask) {
    let identity = rotate_deg == (0.0, 0.0, 0.0)
        && scale == (1.0, 1.0, 1.0)
        && translate_vox == (0.0, 0.0, 0.0);
    if identity {
        return (v.clone(), label.clone());
    }
    let r = rotation_matrix(rotate_deg.0, rotate_deg.1, rotate_deg.2);
    // Forward map: p -> R * S * (p - c) + c + t; pull with its inverse.
    let m = [
        [r[0][0] * scale.0, r[0][1] * scale.1, r[0][2] * scale.2],
        [r[1][0] * scale.0, r[1][1] * scale.1, r[1][2] * scale.2],
        [r[2][0] * scale.0, r[2][1] * scale.1, r[2][2] * scale.2],
    ];
    let inv = invert3(&m);
    let (nx, ny, nz) = v.dims();
    let c = (
        (nx as f64 - 1.0) / 2.0,
        (ny as f64 - 1.0) / 2.0,
        (nz as f64 - 1.0) / 2.0,
    );
    let map = move |i: f64, j: f64, k: f64| {
        let dx = i - c.0 - translate_vox.0;
        let dy = j - c.1 - translate_vox.1;
        let dz = k - c.2 - translate_vox.2;
        (
            inv[0][0] * dx + inv[0][1] * dy + inv[0][2] * dz + c.0,
            inv[1][0] * dx + inv[1][1] * dy + inv[1][2] * dz + c.1,
            inv[2][0] * dx + inv[2][1] * dy + inv[2][2] * dz + c.2,
        )
    };
    let image = warp_by(v, Interp::Cubic, Boundary::Zero, map);
    let lab = warp_by(label.volume(), Interp::Linear, Boundary::Zero, map);
    (image, SoftMask::clamped(lab))
}

/// Node spacing (voxels) of the coarse elastic displacement grid.
const ELASTIC_NODE_SPACING: usize = 4;

/// Elastic deformation: random offsets on a coarse node grid, Gaussian
/// smoothing across nodes, linear upsampling to a dense field, then
/// inverse-mapped resampling (clamped at the borders).
pub fn elastic_deform(
    v: &Volume3D,
    label: &SoftMask,
    cfg: &ElasticCfg,
    rng: &mut DrawRng,
) -> (Volume3D, SoftMask) {
    let magnitude = rng.range(cfg.magnitude.0, cfg.magnitude.1);
    let sigma = rng.range(cfg.sigma.0, cfg.sigma.1);
    let (nx, ny, nz) = v.dims();
    let nodes = |n: usize| (n - 1) / ELASTIC_NODE_SPACING + 2;
    let (gx, gy, gz) = (nodes(nx), nodes(ny), nodes(nz));
    let mut field = vec![[0.0f64; 3]; gx * gy * gz];
    for node in field.iter_mut() {
        for comp in node.iter_mut() {
            *comp = rng.range(-1.0, 1.0) * magnitude;
        }
    }
    if magnitude == 0.0 {
        return (v.clone(), label.clone());
    }

    // Separable Gaussian blur across nodes for each component. The field is
    // then centered so the deformation carries no bulk shift (translation
    // belongs to the affine step); without this, heavy smoothing on small
    // grids degenerates into a large global displacement.
    let kernel = gaussian_kernel(sigma);
    for comp in 0..3 {
        let mut values: Vec<f64> = field.iter().map(|n| n[comp]).collect();
        values = blur_axis(&values, (gx, gy, gz), 0, &kernel);
        values = blur_axis(&values, (gx, gy, gz), 1, &kernel);
        values = blur_axis(&values, (gx, gy, gz), 2, &kernel);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        for (node, val) in field.iter_mut().zip(values) {
            node[comp] = val - mean;
        }
    }

    let spacing = ELASTIC_NODE_SPACING as f64;
    let sample_field = move |i: f64, j: f64, k: f64, comp: usize| -> f64 {
        let (fx, fy, fz) = (i / spacing, j / spacing, k / spacing);
        let (x0, y0, z0) = (fx.floor(), fy.floor(), fz.floor());
        let (tx, ty, tz) = (fx - x0, fy - y0, fz - z0);
        let at = |a: usize, b: usize, c: usize| -> f64 {
            let a = a.min(gx - 1);
            let b = b.min(gy - 1);
            let c = c.min(gz - 1);
            field[a + gx * (b + gy * c)][comp]
        };
        let (x0, y0, z0) = (x0 as usize, y0 as usize, z0 as usize);
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let mut planes = [0.0; 2];
        for (dz, plane) in planes.iter_mut().enumerate() {
            let c00 = lerp(at(x0, y0, z0 + dz), at(x0 + 1, y0, z0 + dz), tx);
            let c10 = lerp(at(x0, y0 + 1, z0 + dz), at(x0 + 1, y0 + 1, z0 + dz), tx);
            *plane = lerp(c00, c10, ty);
        }
        lerp(planes[0], planes[1], tz)
    };

    let map = move |i: f64, j: f64, k: f64| {
        (
            i + sample_field(i, j, k, 0),
            j + sample_field(i, j, k, 1),
            k + sample_field(i, j, k, 2),
        )
    };
    let image = warp_by(v, Interp::Cubic, Boundary::Clamp, &map);
    let lab = warp_by(label.volume(), Interp::Linear, Boundary::Clamp, &map);
    (image, SoftMask::clamped(lab))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-0.5 * (x as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// 1D convolution along one axis with replicated edges.
fn blur_axis(
    values: &[f64],
    dims: (usize, usize, usize),
    axis: usize,
    kernel: &[f64],
) -> Vec<f64> {
    if kernel.len() == 1 {
        return values.to_vec();
    }
    let (nx, ny, nz) = dims;
    let radius = (kernel.len() / 2) as i64;
    let n = [nx, ny, nz];
    let mut out = vec![0.0f64; values.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = [i as i64, j as i64, k as i64];
                let mut acc = 0.0;
                for (off, &w) in kernel.iter().enumerate() {
                    let mut p = idx;
                    p[axis] += off as i64 - radius;
                    p[axis] = p[axis].clamp(0, n[axis] as i64 - 1);
                    acc += w
                        * values
                            [p[0] as usize + nx * (p[1] as usize + ny * p[2] as usize)];
                }
                out[i + nx * (j + ny * k)] = acc;
            }
        }
    }
    out
}

/// Simulate low resolution: linear downsampling by a factor in (0, 1],
/// cubic upsampling back to the original dims. Image only.
pub fn simulate_low_res(v: &Volume3D, factor: f64) -> Volume3D {
    if factor == 1.0 {
        return v.clone();
    }
    let (nx, ny, nz) = v.dims();
    let down = (
        ((nx as f64 * factor).round() as usize).max(1),
        ((ny as f64 * factor).round() as usize).max(1),
        ((nz as f64 * factor).round() as usize).max(1),
    );
    if down == (nx, ny, nz) {
        return v.clone();
    }
    let small = resample_to_dims(v, down, Interp::Linear).expect("dims >= 1");
    let mut up = resample_to_dims(&small, (nx, ny, nz), Interp::Cubic).expect("dims >= 1");
    // The round trip preserves the grid; restore the original metadata
    // verbatim to avoid accumulating rounding in spacing.
    up = v
        .with_data(up.into_data())
        .expect("same-length buffer");
    up
}

// ---------------------------------------------------------------------------
// Intensity transforms
// ---------------------------------------------------------------------------

/// Gamma correction on the min-max-normalized range; gamma = 1 is the
/// original image. Range endpoints are preserved.
pub fn gamma_correct(v: &Volume3D, gamma: f64) -> Volume3D {
    let min = v.data().iter().cloned().fold(f32::INFINITY, f32::min) as f64;
    let max = v.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let range = max - min;
    if range <= 0.0 || gamma == 1.0 {
        return v.clone();
    }
    let data = v
        .data()
        .iter()
        .map(|&x| (((x as f64 - min) / range).powf(gamma) * range + min) as f32)
        .collect();
    v.with_data(data).expect("same-length buffer")
}

/// Multiplicative bias field: exp of a degree-3 polynomial over coordinates
/// normalized to [-1, 1]. The constant term is excluded so any positive
/// coefficient produces spatial variation; coefficients are consumed in
/// graded lexicographic (i, j, k) order.
pub fn bias_field(v: &Volume3D, coefficients: &[f64]) -> Volume3D {
    let terms = bias_field_terms();
    assert_eq!(
        coefficients.len(),
        terms.len(),
        "bias field expects {} coefficients",
        terms.len()
    );
    let (nx, ny, nz) = v.dims();
    let norm = |i: usize, n: usize| {
        if n <= 1 {
            0.0
        } else {
            2.0 * i as f64 / (n as f64 - 1.0) - 1.0
        }
    };
    let mut data = vec![0.0f32; v.len()];
    for k in 0..nz {
        let z = norm(k, nz);
        for j in 0..ny {
            let y = norm(j, ny);
            for i in 0..nx {
                let x = norm(i, nx);
                let mut poly = 0.0;
                for (c, &(px, py, pz)) in coefficients.iter().zip(&terms) {
                    poly += c * x.powi(px) * y.powi(py) * z.powi(pz);
                }
                data[i + nx * (j + ny * k)] =
                    (v.at(i, j, k) as f64 * poly.exp()) as f32;
            }
        }
    }
    v.with_data(data).expect("same-length buffer")
}

/// Exponent triples (i, j, k) with 1 <= i+j+k <= 3, graded lexicographic.
pub fn bias_field_terms() -> Vec<(i32, i32, i32)> {
    let mut terms = Vec::new();
    for total in 1..=3 {
        for i in (0..=total).rev() {
            for j in (0..=total - i).rev() {
                let k = total - i - j;
                terms.push((i, j, k));
            }
        }
    }
    terms
}

/// Additive Gaussian noise with the given STD (2 draws per voxel).
pub fn gaussian_noise(v: &Volume3D, std: f64, rng: &mut DrawRng) -> Volume3D {
    if std == 0.0 {
        return v.clone();
    }
    let data = v
        .data()
        .iter()
        .map(|&x| (x as f64 + std * rng.normal()) as f32)
        .collect();
    v.with_data(data).expect("same-length buffer")
}

/// Separable Gaussian smoothing with per-axis STDs (replicated edges).
pub fn gaussian_smooth(v: &Volume3D, std: (f64, f64, f64)) -> Volume3D {
    let mut values: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    for (axis, sigma) in [std.0, std.1, std.2].into_iter().enumerate() {
        if sigma > 0.0 {
            values = blur_axis(&values, v.dims(), axis, &gaussian_kernel(sigma));
        }
    }
    let data = values.into_iter().map(|x| x as f32).collect();
    v.with_data(data).expect("same-length buffer")
}

/// Intensity scaling: multiply by (1 + s), or by s directly in raw mode.
pub fn intensity_scale(v: &Volume3D, s: f64, raw_multiplier: bool) -> Volume3D {
    let factor = if raw_multiplier { s } else { 1.0 + s };
    let data = v
        .data()
        .iter()
        .map(|&x| (x as f64 * factor) as f32)
        .collect();
    v.with_data(data).expect("same-length buffer")
}

/// Mirror the listed axes on both image and label (pure data permutation).
pub fn random_mirror(
    v: &Volume3D,
    label: &SoftMask,
    flips: (bool, bool, bool),
) -> (Volume3D, SoftMask) {
    if flips == (false, false, false) {
        return (v.clone(), label.clone());
    }
    let flip_one = |vol: &Volume3D| -> Volume3D {
        let (nx, ny, nz) = vol.dims();
        let mut data = vec![0.0f32; vol.len()];
        for k in 0..nz {
            let sk = if flips.2 { nz - 1 - k } else { k };
            for j in 0..ny {
                let sj = if flips.1 { ny - 1 - j } else { j };
                for i in 0..nx {
                    let si = if flips.0 { nx - 1 - i } else { i };
                    data[i + nx * (j + ny * k)] = vol.at(si, sj, sk);
                }
            }
        }
        vol.with_data(data).expect("same-length buffer")
    };
    (
        flip_one(v),
        SoftMask::clamped(flip_one(label.volume())),
    )
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Apply the full augmentation stack to a pair. Deterministic given
/// (pair, cfg): the stream is seeded from `cfg.seed`. The label passes
/// through spatial transforms with linear interpolation only, is never
/// binarized, and is clamped to [0, 1]; the image is z-normalized last.
pub fn augment_pair(pair: &SamplePair, cfg: &AugmentConfig) -> SamplePair {
    let mut rng = DrawRng::new(cfg.seed);
    let mut image = pair.image.clone();
    let mut label = pair.label.clone();

    if rng.coin(cfg.affine.probability) {
        (image, label) = random_affine(&image, &label, &cfg.affine, &mut rng);
    }
    if rng.coin(cfg.elastic.probability) {
        (image, label) = elastic_deform(&image, &label, &cfg.elastic, &mut rng);
    }
    if rng.coin(cfg.low_res.probability) {
        let f = rng.range(cfg.low_res.range.0, cfg.low_res.range.1);
        image = simulate_low_res(&image, f);
    }
    if rng.coin(cfg.gamma.probability) {
        let g = rng.range(cfg.gamma.range.0, cfg.gamma.range.1);
        image = gamma_correct(&image, g);
    }
    if rng.coin(cfg.bias_field.probability) {
        let coeffs: Vec<f64> = (0..bias_field_terms().len())
            .map(|_| rng.range(cfg.bias_field.range.0, cfg.bias_field.range.1))
            .collect();
        image = bias_field(&image, &coeffs);
    }
    if rng.coin(cfg.noise.probability) {
        let std = rng.range(cfg.noise.range.0, cfg.noise.range.1);
        image = gaussian_noise(&image, std, &mut rng);
    }
    if rng.coin(cfg.smooth.probability) {
        let sx = rng.range(cfg.smooth.range.0, cfg.smooth.range.1);
        let sy = rng.range(cfg.smooth.range.0, cfg.smooth.range.1);
        let sz = rng.range(cfg.smooth.range.0, cfg.smooth.range.1);
        image = gaussian_smooth(&image, (sx, sy, sz));
    }
    if rng.coin(cfg.intensity_scale.probability) {
        let s = rng.range(cfg.intensity_scale.scale.0, cfg.intensity_scale.scale.1);
        image = intensity_scale(&image, s, cfg.intensity_scale.raw_multiplier);
    }
    if rng.coin(cfg.mirror.probability) {
        let flips = (rng.coin(0.5), rng.coin(0.5), rng.coin(0.5));
        (image, label) = random_mirror(&image, &label, flips);
    }

    let image = znormalize(&image);
    let label = SoftMask::clamped(label.into_volume());
    SamplePair { image, label }
}
