//! Canonical 3D volume type with reorientation, resampling, cropping,
//! intensity normalization and world-space sampling.
//!
//! Data is stored as a flat `Vec<f32>` in x-fastest order (the NIfTI
//! convention): `index(i, j, k) = i + nx * (j + ny * k)`. The affine maps
//! voxel indices to world millimetres in a RAS+ frame. Volumes are immutable
//! value objects once built; every operation returns a new volume.

use crate::error::{Error, Result};

/// Anatomical direction a voxel axis points toward with increasing index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisDir {
    Right,
    Left,
    Anterior,
    Posterior,
    Superior,
    Inferior,
}

impl AxisDir {
    pub fn code(self) -> char {
        match self {
            AxisDir::Right => 'R',
            AxisDir::Left => 'L',
            AxisDir::Anterior => 'A',
            AxisDir::Posterior => 'P',
            AxisDir::Superior => 'S',
            AxisDir::Inferior => 'I',
        }
    }

    pub fn from_code(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'R' => Ok(AxisDir::Right),
            'L' => Ok(AxisDir::Left),
            'A' => Ok(AxisDir::Anterior),
            'P' => Ok(AxisDir::Posterior),
            'S' => Ok(AxisDir::Superior),
            'I' => Ok(AxisDir::Inferior),
            other => Err(Error::InvalidArgument(format!(
                "unknown orientation letter '{other}'"
            ))),
        }
    }

    /// World axis index (0 = L/R, 1 = P/A, 2 = I/S) and the sign of the
    /// direction in RAS+ coordinates.
    pub fn world_axis(self) -> (usize, f64) {
        match self {
            AxisDir::Right => (0, 1.0),
            AxisDir::Left => (0, -1.0),
            AxisDir::Anterior => (1, 1.0),
            AxisDir::Posterior => (1, -1.0),
            AxisDir::Superior => (2, 1.0),
            AxisDir::Inferior => (2, -1.0),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            AxisDir::Right => AxisDir::Left,
            AxisDir::Left => AxisDir::Right,
            AxisDir::Anterior => AxisDir::Posterior,
            AxisDir::Posterior => AxisDir::Anterior,
            AxisDir::Superior => AxisDir::Inferior,
            AxisDir::Inferior => AxisDir::Superior,
        }
    }
}

/// Three-letter anatomical orientation code, e.g. RPI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orientation(pub [AxisDir; 3]);

impl Orientation {
    /// Parse a code like "RPI". Each world axis pair must appear exactly once.
    pub fn parse(code: &str) -> Result<Self> {
        let chars: Vec<char> = code.chars().collect();
        if chars.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "orientation code must have 3 letters, got {code:?}"
            )));
        }
        let dirs = [
            AxisDir::from_code(chars[0])?,
            AxisDir::from_code(chars[1])?,
            AxisDir::from_code(chars[2])?,
        ];
        let mut seen = [false; 3];
        for d in dirs {
            let (axis, _) = d.world_axis();
            if seen[axis] {
                return Err(Error::InvalidArgument(format!(
                    "orientation code {code:?} repeats a world axis"
                )));
            }
            seen[axis] = true;
        }
        Ok(Orientation(dirs))
    }

    pub fn code(&self) -> String {
        self.0.iter().map(|d| d.code()).collect()
    }

    /// Classify the dominant anatomical direction of each affine column.
    pub fn from_affine(affine: &[[f64; 4]; 4]) -> Result<Self> {
        let mut dirs = [AxisDir::Right; 3];
        let mut taken = [false; 3];
        for col in 0..3 {
            let v = [affine[0][col], affine[1][col], affine[2][col]];
            let mut best = 0;
            for a in 1..3 {
                if v[a].abs() > v[best].abs() {
                    best = a;
                }
            }
            if v[best] == 0.0 || taken[best] {
                return Err(Error::InvalidArgument(
                    "affine direction columns are degenerate; cannot derive an orientation code"
                        .into(),
                ));
            }
            taken[best] = true;
            let positive = v[best] > 0.0;
            dirs[col] = match (best, positive) {
                (0, true) => AxisDir::Right,
                (0, false) => AxisDir::Left,
                (1, true) => AxisDir::Anterior,
                (1, false) => AxisDir::Posterior,
                (2, true) => AxisDir::Superior,
                (2, false) => AxisDir::Inferior,
                _ => unreachable!(),
            };
        }
        Ok(Orientation(dirs))
    }
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Interpolation scheme for resampling and sampling operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    /// Catmull-Rom cubic convolution (used for images).
    Cubic,
    /// Trilinear (used for soft labels).
    Linear,
    /// Nearest neighbour (used for binary labels).
    Nearest,
}

/// A 3D scalar grid with voxel spacing, orientation and a voxel-to-world
/// affine. Carries both images and masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    orientation: Orientation,
    affine: [[f64; 4]; 4],
    data: Vec<f32>,
}

impl Volume3D {
    /// Build a volume, checking the structural invariants: positive dims and
    /// spacing, matching data length, invertible affine whose column norms
    /// agree with the spacing within 1e-4.
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        affine: [[f64; 4]; 4],
        data: Vec<f32>,
    ) -> Result<Self> {
        if dims.0 < 1 || dims.1 < 1 || dims.2 < 1 {
            return Err(Error::InvalidArgument(format!(
                "dims components must be >= 1, got {dims:?}"
            )));
        }
        if spacing.0 <= 0.0 || spacing.1 <= 0.0 || spacing.2 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "spacing components must be > 0, got {spacing:?}"
            )));
        }
        let n = dims.0 * dims.1 * dims.2;
        if data.len() != n {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match dims {:?} (expected {})",
                data.len(),
                dims,
                n
            )));
        }
        let sp = [spacing.0, spacing.1, spacing.2];
        for (col, s) in sp.iter().enumerate() {
            let norm = (affine[0][col].powi(2) + affine[1][col].powi(2) + affine[2][col].powi(2))
                .sqrt();
            if (norm - s).abs() > 1e-4 {
                return Err(Error::InvalidArgument(format!(
                    "affine column {col} norm {norm} disagrees with spacing {s}"
                )));
            }
        }
        if invert_affine(&affine).is_none() {
            return Err(Error::InvalidArgument("affine is not invertible".into()));
        }
        let orientation = Orientation::from_affine(&affine)?;
        Ok(Volume3D {
            dims,
            spacing,
            orientation,
            affine,
            data,
        })
    }

    /// Axis-aligned RAS+ volume: voxel axes point toward R, A, S with the
    /// world origin at voxel (0,0,0).
    pub fn from_parts(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        data: Vec<f32>,
    ) -> Result<Self> {
        let affine = [
            [spacing.0, 0.0, 0.0, 0.0],
            [0.0, spacing.1, 0.0, 0.0],
            [0.0, 0.0, spacing.2, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        Volume3D::new(dims, spacing, affine, data)
    }

    /// Constant-filled volume on an RAS+ axis-aligned grid.
    pub fn filled(dims: (usize, usize, usize), spacing: (f64, f64, f64), value: f32) -> Self {
        let n = dims.0 * dims.1 * dims.2;
        Volume3D::from_parts(dims, spacing, vec![value; n]).expect("valid constant volume")
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn affine(&self) -> &[[f64; 4]; 4] {
        &self.affine
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.idx(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let ix = self.idx(i, j, k);
        self.data[ix] = v;
    }

    /// Replace the data buffer, keeping the grid. Lengths must match.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Volume3D::new(self.dims, self.spacing, self.affine, data)
    }

    /// World position (mm) of a voxel center.
    pub fn voxel_to_world(&self, i: f64, j: f64, k: f64) -> (f64, f64, f64) {
        let a = &self.affine;
        (
            a[0][0] * i + a[0][1] * j + a[0][2] * k + a[0][3],
            a[1][0] * i + a[1][1] * j + a[1][2] * k + a[1][3],
            a[2][0] * i + a[2][1] * j + a[2][2] * k + a[2][3],
        )
    }

    /// Continuous voxel coordinate of a world position (mm).
    pub fn world_to_voxel(&self, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
        let inv = invert_affine(&self.affine).expect("affine invertible by construction");
        (
            inv[0][0] * x + inv[0][1] * y + inv[0][2] * z + inv[0][3],
            inv[1][0] * x + inv[1][1] * y + inv[1][2] * z + inv[1][3],
            inv[2][0] * x + inv[2][1] * y + inv[2][2] * z + inv[2][3],
        )
    }

    /// True when two volumes live on the same grid: equal dims, spacing
    /// within 1e-9 and affine entries within 1e-6 mm.
    pub fn same_grid(&self, other: &Volume3D) -> bool {
        if self.dims != other.dims {
            return false;
        }
        let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
        if !(close(self.spacing.0, other.spacing.0, 1e-9)
            && close(self.spacing.1, other.spacing.1, 1e-9)
            && close(self.spacing.2, other.spacing.2, 1e-9))
        {
            return false;
        }
        for r in 0..4 {
            for c in 0..4 {
                if !close(self.affine[r][c], other.affine[r][c], 1e-6) {
                    return false;
                }
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Small affine helpers (4x4 with last row [0,0,0,1])
// ---------------------------------------------------------------------------

/// Invert a voxel-to-world affine. Returns None when the 3x3 part is singular.
pub fn invert_affine(a: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let m = [
        [a[0][0], a[0][1], a[0][2]],
        [a[1][0], a[1][1], a[1][2]],
        [a[2][0], a[2][1], a[2][2]],
    ];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv = [
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
    ];
    let t = [a[0][3], a[1][3], a[2][3]];
    let mut out = [[0.0; 4]; 4];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = inv[r][c];
        }
        out[r][3] = -(inv[r][0] * t[0] + inv[r][1] * t[1] + inv[r][2] * t[2]);
    }
    out[3][3] = 1.0;
    Some(out)
}

pub fn mul_affine(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let mut s = 0.0;
            for k in 0..4 {
                s += a[r][k] * b[k][c];
            }
            out[r][c] = s;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Interpolation core
// ---------------------------------------------------------------------------

/// Boundary policy for the interpolation kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Boundary {
    /// Clamp indices to the grid (resampling: keeps constants constant).
    Clamp,
    /// Out-of-grid samples read as 0 (warping: background is zero).
    Zero,
}

#[inline]
fn fetch(v: &Volume3D, i: i64, j: i64, k: i64, boundary: Boundary) -> f64 {
    let (nx, ny, nz) = v.dims();
    match boundary {
        Boundary::Clamp => {
            let ci = i.clamp(0, nx as i64 - 1) as usize;
            let cj = j.clamp(0, ny as i64 - 1) as usize;
            let ck = k.clamp(0, nz as i64 - 1) as usize;
            v.at(ci, cj, ck) as f64
        }
        Boundary::Zero => {
            if i < 0 || j < 0 || k < 0 || i >= nx as i64 || j >= ny as i64 || k >= nz as i64 {
                0.0
            } else {
                v.at(i as usize, j as usize, k as usize) as f64
            }
        }
    }
}

/// Catmull-Rom cubic through four samples at t in [0,1) past v1. The Horner
/// form is written in differences so a constant input reproduces exactly.
#[inline]
fn catmull_rom(v0: f64, v1: f64, v2: f64, v3: f64, t: f64) -> f64 {
    v1 + 0.5
        * t
        * ((v2 - v0)
            + t * ((2.0 * v0 - 5.0 * v1 + 4.0 * v2 - v3) + t * (3.0 * (v1 - v2) + v3 - v0)))
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Interpolate at a continuous voxel coordinate. Nearest rounds half-up per
/// axis; linear and cubic are separable with the given boundary policy.
pub(crate) fn interp_voxel(
    v: &Volume3D,
    fx: f64,
    fy: f64,
    fz: f64,
    scheme: Interp,
    boundary: Boundary,
) -> f64 {
    match scheme {
        Interp::Nearest => {
            let i = (fx + 0.5).floor() as i64;
            let j = (fy + 0.5).floor() as i64;
            let k = (fz + 0.5).floor() as i64;
            fetch(v, i, j, k, boundary)
        }
        Interp::Linear => {
            let x0 = fx.floor();
            let y0 = fy.floor();
            let z0 = fz.floor();
            let (tx, ty, tz) = (fx - x0, fy - y0, fz - z0);
            let (i, j, k) = (x0 as i64, y0 as i64, z0 as i64);
            let mut plane = [0.0; 2];
            for (dk, p) in plane.iter_mut().enumerate() {
                let c00 = fetch(v, i, j, k + dk as i64, boundary);
                let c10 = fetch(v, i + 1, j, k + dk as i64, boundary);
                let c01 = fetch(v, i, j + 1, k + dk as i64, boundary);
                let c11 = fetch(v, i + 1, j + 1, k + dk as i64, boundary);
                *p = lerp(lerp(c00, c10, tx), lerp(c01, c11, tx), ty);
            }
            lerp(plane[0], plane[1], tz)
        }
        Interp::Cubic => {
            let x0 = fx.floor();
            let y0 = fy.floor();
            let z0 = fz.floor();
            let (tx, ty, tz) = (fx - x0, fy - y0, fz - z0);
            let (i, j, k) = (x0 as i64, y0 as i64, z0 as i64);
            let mut zvals = [0.0; 4];
            for dk in 0..4 {
                let mut yvals = [0.0; 4];
                for dj in 0..4 {
                    let xv: Vec<f64> = (0..4)
                        .map(|di| fetch(v, i + di - 1, j + dj - 1, k + dk - 1, boundary))
                        .collect();
                    yvals[dj as usize] = catmull_rom(xv[0], xv[1], xv[2], xv[3], tx);
                }
                zvals[dk as usize] = catmull_rom(yvals[0], yvals[1], yvals[2], yvals[3], ty);
            }
            catmull_rom(zvals[0], zvals[1], zvals[2], zvals[3], tz)
        }
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Reorient by permuting/flipping voxel axes; world coordinates of every
/// voxel center are preserved and data is never interpolated.
pub fn reorient(v: &Volume3D, target: &str) -> Result<Volume3D> {
    let tgt = Orientation::parse(target)?;
    let cur = v.orientation();

    // For each output axis, find the input axis on the same world axis and
    // whether it must be flipped.
    let mut perm = [0usize; 3];
    let mut flip = [false; 3];
    for o in 0..3 {
        let (want_axis, want_sign) = tgt.0[o].world_axis();
        let mut found = None;
        for (i, d) in cur.0.iter().enumerate() {
            let (axis, sign) = d.world_axis();
            if axis == want_axis {
                found = Some((i, sign != want_sign));
            }
        }
        let (i, f) = found.expect("orientation codes cover all world axes");
        perm[o] = i;
        flip[o] = f;
    }

    let old_dims = [v.dims.0, v.dims.1, v.dims.2];
    let old_sp = [v.spacing.0, v.spacing.1, v.spacing.2];
    let new_dims = (old_dims[perm[0]], old_dims[perm[1]], old_dims[perm[2]]);
    let new_spacing = (old_sp[perm[0]], old_sp[perm[1]], old_sp[perm[2]]);

    // Index-space map T: new voxel index -> old voxel index, as an affine.
    let mut t = [[0.0f64; 4]; 4];
    t[3][3] = 1.0;
    for o in 0..3 {
        if flip[o] {
            t[perm[o]][o] = -1.0;
            t[perm[o]][3] = (old_dims[perm[o]] - 1) as f64;
        } else {
            t[perm[o]][o] = 1.0;
        }
    }
    let new_affine = mul_affine(&v.affine, &t);

    let (nnx, nny, nnz) = new_dims;
    let mut data = vec![0.0f32; nnx * nny * nnz];
    for k in 0..nnz {
        for j in 0..nny {
            for i in 0..nnx {
                let newi = [i, j, k];
                let mut old = [0usize; 3];
                for o in 0..3 {
                    let x = newi[o];
                    old[perm[o]] = if flip[o] { old_dims[perm[o]] - 1 - x } else { x };
                }
                data[i + nnx * (j + nny * k)] = v.at(old[0], old[1], old[2]);
            }
        }
    }
    Volume3D::new(new_dims, new_spacing, new_affine, data)
}

/// Resample to a target spacing, preserving world extent (dims rounded,
/// minimum 1 per axis) and anchoring the voxel-(0,0,0) center. Cubic for
/// images, linear for soft labels, nearest for binary labels.
pub fn resample(v: &Volume3D, target_spacing: (f64, f64, f64), scheme: Interp) -> Result<Volume3D> {
    let ts = [target_spacing.0, target_spacing.1, target_spacing.2];
    if ts.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be > 0, got {target_spacing:?}"
        )));
    }
    let od = [v.dims.0, v.dims.1, v.dims.2];
    let os = [v.spacing.0, v.spacing.1, v.spacing.2];
    let mut nd = [0usize; 3];
    for a in 0..3 {
        nd[a] = ((od[a] as f64 * os[a] / ts[a]).round() as usize).max(1);
    }

    // Scale index space; direction cosines and origin are unchanged.
    let mut scale = [[0.0f64; 4]; 4];
    scale[3][3] = 1.0;
    for a in 0..3 {
        scale[a][a] = ts[a] / os[a];
    }
    let new_affine = mul_affine(&v.affine, &scale);

    let mut data = vec![0.0f32; nd[0] * nd[1] * nd[2]];
    let rx = ts[0] / os[0];
    let ry = ts[1] / os[1];
    let rz = ts[2] / os[2];
    for k in 0..nd[2] {
        let fz = k as f64 * rz;
        for j in 0..nd[1] {
            let fy = j as f64 * ry;
            for i in 0..nd[0] {
                let fx = i as f64 * rx;
                data[i + nd[0] * (j + nd[1] * k)] =
                    interp_voxel(v, fx, fy, fz, scheme, Boundary::Clamp) as f32;
            }
        }
    }
    Volume3D::new(
        (nd[0], nd[1], nd[2]),
        (ts[0], ts[1], ts[2]),
        new_affine,
        data,
    )
}

/// Resample to explicit output dims over the same anchored index map
/// (used by low-resolution simulation; identity when dims are unchanged).
pub fn resample_to_dims(
    v: &Volume3D,
    target_dims: (usize, usize, usize),
    scheme: Interp,
) -> Result<Volume3D> {
    let nd = [target_dims.0, target_dims.1, target_dims.2];
    if nd.iter().any(|&d| d < 1) {
        return Err(Error::InvalidArgument(format!(
            "target dims must be >= 1, got {target_dims:?}"
        )));
    }
    let od = [v.dims.0, v.dims.1, v.dims.2];
    let os = [v.spacing.0, v.spacing.1, v.spacing.2];
    let mut r = [0.0f64; 3];
    let mut ns = [0.0f64; 3];
    for a in 0..3 {
        r[a] = od[a] as f64 / nd[a] as f64;
        ns[a] = os[a] * r[a];
    }
    let mut scale = [[0.0f64; 4]; 4];
    scale[3][3] = 1.0;
    for a in 0..3 {
        scale[a][a] = r[a];
    }
    let new_affine = mul_affine(&v.affine, &scale);
    let mut data = vec![0.0f32; nd[0] * nd[1] * nd[2]];
    for k in 0..nd[2] {
        for j in 0..nd[1] {
            for i in 0..nd[0] {
                data[i + nd[0] * (j + nd[1] * k)] = interp_voxel(
                    v,
                    i as f64 * r[0],
                    j as f64 * r[1],
                    k as f64 * r[2],
                    scheme,
                    Boundary::Clamp,
                ) as f32;
            }
        }
    }
    Volume3D::new(target_dims, (ns[0], ns[1], ns[2]), new_affine, data)
}

/// Center crop or pad to target dims. Odd size differences are left-biased;
/// out-of-bounds regions take `pad_value`; retained voxels keep their world
/// positions.
pub fn center_crop_or_pad(
    v: &Volume3D,
    target_dims: (usize, usize, usize),
    pad_value: f32,
) -> Result<Volume3D> {
    let td = [target_dims.0, target_dims.1, target_dims.2];
    if td.iter().any(|&d| d < 1) {
        return Err(Error::InvalidArgument(format!(
            "target dims must be >= 1, got {target_dims:?}"
        )));
    }
    let od = [v.dims.0, v.dims.1, v.dims.2];
    // Signed offset from new index to old index; truncating division keeps
    // crop-then-pad round trips aligned.
    let off: Vec<i64> = (0..3)
        .map(|a| (od[a] as i64 - td[a] as i64) / 2)
        .collect();

    let mut data = vec![pad_value; td[0] * td[1] * td[2]];
    for k in 0..td[2] {
        let ok = k as i64 + off[2];
        if ok < 0 || ok >= od[2] as i64 {
            continue;
        }
        for j in 0..td[1] {
            let oj = j as i64 + off[1];
            if oj < 0 || oj >= od[1] as i64 {
                continue;
            }
            for i in 0..td[0] {
                let oi = i as i64 + off[0];
                if oi < 0 || oi >= od[0] as i64 {
                    continue;
                }
                data[i + td[0] * (j + td[1] * k)] =
                    v.at(oi as usize, oj as usize, ok as usize);
            }
        }
    }
    let mut new_affine = v.affine;
    for r in 0..3 {
        new_affine[r][3] = v.affine[r][3]
            + v.affine[r][0] * off[0] as f64
            + v.affine[r][1] * off[1] as f64
            + v.affine[r][2] * off[2] as f64;
    }
    Volume3D::new(target_dims, v.spacing, new_affine, data)
}

/// Z-score normalization with the population standard deviation. A constant
/// input (std < 1e-12) yields an all-zero volume and a warning.
pub fn znormalize(v: &Volume3D) -> Volume3D {
    let n = v.data.len() as f64;
    let mean = v.data.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v
        .data
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std < 1e-12 {
        log::warn!("znormalize: constant input (std={std:.3e}); returning zeros");
        return v
            .with_data(vec![0.0; v.data.len()])
            .expect("same-length buffer");
    }
    let data = v
        .data
        .iter()
        .map(|&x| ((x as f64 - mean) / std) as f32)
        .collect();
    v.with_data(data).expect("same-length buffer")
}

/// Value at a world point (mm). Points outside the grid return 0.
pub fn sample_at(v: &Volume3D, world_point: (f64, f64, f64), scheme: Interp) -> f64 {
    let (fx, fy, fz) = v.world_to_voxel(world_point.0, world_point.1, world_point.2);
    interp_voxel(v, fx, fy, fz, scheme, Boundary::Zero)
}

/// Resample `v` onto the exact grid of `reference` by sampling at the
/// reference's voxel-center world positions (zero outside `v`). Identical
/// grids are passed through untouched.
pub fn resample_to_grid(v: &Volume3D, reference: &Volume3D, scheme: Interp) -> Volume3D {
    if v.same_grid(reference) {
        let mut out = reference.clone();
        out.data.copy_from_slice(&v.data);
        return out;
    }
    let (nx, ny, nz) = reference.dims();
    let inv = invert_affine(&v.affine).expect("affine invertible by construction");
    let m = mul_affine(&inv, &reference.affine);
    let mut data = vec![0.0f32; nx * ny * nz];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let (fi, fj, fk) = (i as f64, j as f64, k as f64);
                let fx = m[0][0] * fi + m[0][1] * fj + m[0][2] * fk + m[0][3];
                let fy = m[1][0] * fi + m[1][1] * fj + m[1][2] * fk + m[1][3];
                let fz = m[2][0] * fi + m[2][1] * fj + m[2][2] * fk + m[2][3];
                data[i + nx * (j + ny * k)] =
                    interp_voxel(v, fx, fy, fz, scheme, Boundary::Zero) as f32;
            }
        }
    }
    reference.with_data(data).expect("same-length buffer")
}

// ---------------------------------------------------------------------------
// Mask newtypes
// ---------------------------------------------------------------------------

/// Mask with values in [0, 1] encoding partial-volume membership.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask(Volume3D);

impl SoftMask {
    pub fn new(volume: Volume3D) -> Result<Self> {
        for &x in volume.data() {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidArgument(format!(
                    "soft mask value {x} outside [0, 1]"
                )));
            }
        }
        Ok(SoftMask(volume))
    }

    /// Clamp values into [0, 1] instead of validating.
    pub fn clamped(mut volume: Volume3D) -> Self {
        for x in volume.data_mut() {
            *x = x.clamp(0.0, 1.0);
        }
        SoftMask(volume)
    }

    pub fn volume(&self) -> &Volume3D {
        &self.0
    }

    pub fn into_volume(self) -> Volume3D {
        self.0
    }
}

impl std::ops::Deref for SoftMask {
    type Target = Volume3D;
    fn deref(&self) -> &Volume3D {
        &self.0
    }
}

/// Mask with values in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(Volume3D);

impl BinaryMask {
    pub fn new(volume: Volume3D) -> Result<Self> {
        for &x in volume.data() {
            if x != 0.0 && x != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "binary mask value {x} outside {{0, 1}}"
                )));
            }
        }
        Ok(BinaryMask(volume))
    }

    /// Threshold a volume at `threshold` (>= maps to 1).
    pub fn thresholded(volume: &Volume3D, threshold: f64) -> Self {
        let data = volume
            .data()
            .iter()
            .map(|&x| if x as f64 >= threshold { 1.0 } else { 0.0 })
            .collect();
        BinaryMask(volume.with_data(data).expect("same-length buffer"))
    }

    pub fn volume(&self) -> &Volume3D {
        &self.0
    }

    pub fn into_volume(self) -> Volume3D {
        self.0
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask(self.0.clone())
    }
}

impl std::ops::Deref for BinaryMask {
    type Target = Volume3D;
    fn deref(&self) -> &Volume3D {
        &self.0
    }
}
