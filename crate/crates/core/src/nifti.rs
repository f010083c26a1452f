//! NIfTI-1 single-file reader and writer (plain `.nii` and gzip `.nii.gz`).
//!
//! Reading maps header dims/pixdim and the sform (preferred) or qform affine
//! onto [`Volume3D`], converting voxel data to f32 with `scl_slope` /
//! `scl_inter` applied. Accepted datatypes: uint8, int16, int32, float32,
//! float64. Extensions are skipped (`vox_offset` respected); both byte
//! orders are read, little-endian is written.
//!
//! Writing emits a 348-byte header, a 4-byte zero extender and float32 data
//! (352-byte data offset), with the sform set from the affine and the qform
//! copied from it via the quaternion representation.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{invert_affine, Volume3D};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

#[derive(Debug, Clone)]
struct RawHeader {
    dim: [i16; 8],
    datatype: i16,
    pixdim: [f32; 8],
    vox_offset: f32,
    scl_slope: f32,
    scl_inter: f32,
    qform_code: i16,
    sform_code: i16,
    quatern: [f32; 3],
    qoffset: [f32; 3],
    srow: [[f32; 4]; 3],
}

fn parse_header<E: ByteOrder>(h: &[u8]) -> RawHeader {
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = E::read_i16(&h[40 + 2 * i..]);
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&h[76 + 4 * i..]);
    }
    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = E::read_f32(&h[280 + 16 * r + 4 * c..]);
        }
    }
    RawHeader {
        dim,
        datatype: E::read_i16(&h[70..]),
        pixdim,
        vox_offset: E::read_f32(&h[108..]),
        scl_slope: E::read_f32(&h[112..]),
        scl_inter: E::read_f32(&h[116..]),
        qform_code: E::read_i16(&h[252..]),
        sform_code: E::read_i16(&h[254..]),
        quatern: [
            E::read_f32(&h[256..]),
            E::read_f32(&h[260..]),
            E::read_f32(&h[264..]),
        ],
        qoffset: [
            E::read_f32(&h[268..]),
            E::read_f32(&h[272..]),
            E::read_f32(&h[276..]),
        ],
        srow,
    }
}

/// Affine reconstructed from the quaternion representation.
fn qform_affine(h: &RawHeader) -> [[f64; 4]; 4] {
    let b = h.quatern[0] as f64;
    let c = h.quatern[1] as f64;
    let d = h.quatern[2] as f64;
    let a = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
    let qfac = if h.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let r = [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - b * b - c * c,
        ],
    ];
    let sp = [
        h.pixdim[1].abs() as f64,
        h.pixdim[2].abs() as f64,
        h.pixdim[3].abs() as f64,
    ];
    let mut out = [[0.0; 4]; 4];
    for row in 0..3 {
        out[row][0] = r[row][0] * sp[0];
        out[row][1] = r[row][1] * sp[1];
        out[row][2] = r[row][2] * sp[2] * qfac;
        out[row][3] = h.qoffset[row] as f64;
    }
    out[3][3] = 1.0;
    out
}

fn decode_data<E: ByteOrder>(bytes: &[u8], datatype: i16, n: usize) -> Result<Vec<f32>> {
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    if bytes.len() < n * elem {
        return Err(Error::Format(format!(
            "data truncated: need {} bytes, have {}",
            n * elem,
            bytes.len()
        )));
    }
    let out = match datatype {
        DT_UINT8 => bytes[..n].iter().map(|&b| b as f32).collect(),
        DT_INT16 => (0..n).map(|i| E::read_i16(&bytes[2 * i..]) as f32).collect(),
        DT_INT32 => (0..n).map(|i| E::read_i32(&bytes[4 * i..]) as f32).collect(),
        DT_FLOAT32 => (0..n).map(|i| E::read_f32(&bytes[4 * i..])).collect(),
        DT_FLOAT64 => (0..n)
            .map(|i| E::read_f64(&bytes[8 * i..]) as f32)
            .collect(),
        _ => unreachable!(),
    };
    Ok(out)
}

fn parse_nifti_bytes(bytes: &[u8], origin: &Path) -> Result<Volume3D> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "{}: truncated header ({} bytes)",
            origin.display(),
            bytes.len()
        )));
    }
    let little = LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32;
    let big = BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32;
    if !little && !big {
        return Err(Error::Format(format!(
            "{}: sizeof_hdr is not 348 in either byte order",
            origin.display()
        )));
    }

    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic == MAGIC_PAIR {
        return Err(Error::Format(format!(
            "{}: two-file NIfTI-1 (hdr/img) is not supported",
            origin.display()
        )));
    }
    if &magic != MAGIC_SINGLE {
        return Err(Error::Format(format!(
            "{}: bad magic bytes {:?}",
            origin.display(),
            magic
        )));
    }

    let h = if little {
        parse_header::<LittleEndian>(&bytes[..HEADER_SIZE])
    } else {
        parse_header::<BigEndian>(&bytes[..HEADER_SIZE])
    };

    let ndim = h.dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!(
            "{}: dim[0] = {ndim} out of range",
            origin.display()
        )));
    }
    let take = |i: usize| -> Result<usize> {
        let d = if (i as i16) <= ndim { h.dim[i] } else { 1 };
        if d < 1 {
            return Err(Error::Format(format!(
                "{}: dim[{i}] = {d} invalid",
                origin.display()
            )));
        }
        Ok(d as usize)
    };
    let dims = (take(1)?, take(2)?.max(1), take(3)?.max(1));
    for i in 4..=(ndim as usize).min(7) {
        if h.dim[i] > 1 {
            return Err(Error::Format(format!(
                "{}: {}D volumes are not supported (dim[{i}] = {})",
                origin.display(),
                ndim,
                h.dim[i]
            )));
        }
    }

    let affine = if h.sform_code > 0 {
        let mut a = [[0.0f64; 4]; 4];
        for r in 0..3 {
            for c in 0..4 {
                a[r][c] = h.srow[r][c] as f64;
            }
        }
        a[3][3] = 1.0;
        a
    } else if h.qform_code > 0 {
        qform_affine(&h)
    } else {
        let mut a = [[0.0f64; 4]; 4];
        for (i, p) in [h.pixdim[1], h.pixdim[2], h.pixdim[3]].iter().enumerate() {
            a[i][i] = p.abs().max(1e-6) as f64;
        }
        a[3][3] = 1.0;
        a
    };
    // Spacing from the affine's column norms keeps the pair consistent even
    // when pixdim disagrees with the sform.
    let spacing = (
        (affine[0][0].powi(2) + affine[1][0].powi(2) + affine[2][0].powi(2)).sqrt(),
        (affine[0][1].powi(2) + affine[1][1].powi(2) + affine[2][1].powi(2)).sqrt(),
        (affine[0][2].powi(2) + affine[1][2].powi(2) + affine[2][2].powi(2)).sqrt(),
    );

    let offset = h.vox_offset.round() as usize;
    if offset < HEADER_SIZE || offset > bytes.len() {
        return Err(Error::Format(format!(
            "{}: vox_offset {} out of range",
            origin.display(),
            h.vox_offset
        )));
    }
    let n = dims.0 * dims.1 * dims.2;
    let mut data = if little {
        decode_data::<LittleEndian>(&bytes[offset..], h.datatype, n)?
    } else {
        decode_data::<BigEndian>(&bytes[offset..], h.datatype, n)?
    };

    let slope = if h.scl_slope == 0.0 { 1.0 } else { h.scl_slope };
    if slope != 1.0 || h.scl_inter != 0.0 {
        for v in data.iter_mut() {
            *v = (*v as f64 * slope as f64 + h.scl_inter as f64) as f32;
        }
    }

    Volume3D::new(dims, spacing, affine, data)
}

/// Read a NIfTI-1 volume; gzip is detected from the stream's magic bytes.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut decoder = MultiGzDecoder::new(&raw[..]);
        let mut out = Vec::new();
        decoder
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    parse_nifti_bytes(&bytes, path)
}

/// Quaternion (b, c, d) plus qfac for the rotation part of an affine,
/// mirroring the reference NIfTI-1 conversion.
fn affine_to_quatern(affine: &[[f64; 4]; 4], spacing: (f64, f64, f64)) -> ([f64; 3], f64) {
    let sp = [spacing.0, spacing.1, spacing.2];
    let mut r = [[0.0f64; 3]; 3];
    for row in 0..3 {
        for col in 0..3 {
            r[row][col] = affine[row][col] / sp[col];
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    let qfac = if det < 0.0 { -1.0 } else { 1.0 };
    if qfac < 0.0 {
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
    }
    let trace = r[0][0] + r[1][1] + r[2][2] + 1.0;
    let (a, b, c, d);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r[2][1] - r[1][2]) / a;
        c = 0.25 * (r[0][2] - r[2][0]) / a;
        d = 0.25 * (r[1][0] - r[0][1]) / a;
    } else {
        let xd = 1.0 + r[0][0] - r[1][1] - r[2][2];
        let yd = 1.0 + r[1][1] - r[0][0] - r[2][2];
        let zd = 1.0 + r[2][2] - r[0][0] - r[1][1];
        if xd > 1.0 {
            let bb = 0.5 * xd.sqrt();
            b = bb;
            c = 0.25 * (r[0][1] + r[1][0]) / bb;
            d = 0.25 * (r[0][2] + r[2][0]) / bb;
            a = 0.25 * (r[2][1] - r[1][2]) / bb;
        } else if yd > 1.0 {
            let cc = 0.5 * yd.sqrt();
            b = 0.25 * (r[0][1] + r[1][0]) / cc;
            c = cc;
            d = 0.25 * (r[1][2] + r[2][1]) / cc;
            a = 0.25 * (r[0][2] - r[2][0]) / cc;
        } else {
            let dd = 0.5 * zd.sqrt();
            b = 0.25 * (r[0][2] + r[2][0]) / dd;
            c = 0.25 * (r[1][2] + r[2][1]) / dd;
            d = dd;
            a = 0.25 * (r[1][0] - r[0][1]) / dd;
        }
    }
    if a < 0.0 {
        return ([-b, -c, -d], qfac);
    }
    ([b, c, d], qfac)
}

fn encode_nifti(v: &Volume3D) -> Vec<u8> {
    let (nx, ny, nz) = v.dims();
    let (sx, sy, sz) = v.spacing();
    let affine = v.affine();
    let (quat, qfac) = affine_to_quatern(affine, v.spacing());

    let mut h = vec![0u8; HEADER_SIZE + 4]; // header + zero extender
    LittleEndian::write_i32(&mut h[0..], HEADER_SIZE as i32);
    h[38] = b'r'; // regular, conventional
    let dims = [3i16, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut h[70..], DT_FLOAT32);
    LittleEndian::write_i16(&mut h[72..], 32); // bitpix
    let pixdim = [qfac as f32, sx as f32, sy as f32, sz as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut h[108..], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[112..], 1.0); // scl_slope
    LittleEndian::write_f32(&mut h[116..], 0.0); // scl_inter
    h[123] = 2; // xyzt_units: millimetres
    LittleEndian::write_i16(&mut h[252..], 1); // qform_code
    LittleEndian::write_i16(&mut h[254..], 1); // sform_code
    for (i, q) in quat.iter().enumerate() {
        LittleEndian::write_f32(&mut h[256 + 4 * i..], *q as f32);
    }
    for (i, r) in (0..3).map(|r| affine[r][3]).enumerate() {
        LittleEndian::write_f32(&mut h[268 + 4 * i..], r as f32);
    }
    for r in 0..3 {
        for c in 0..4 {
            LittleEndian::write_f32(&mut h[280 + 16 * r + 4 * c..], affine[r][c] as f32);
        }
    }
    h[344..348].copy_from_slice(MAGIC_SINGLE);

    let mut out = h;
    out.reserve(v.len() * 4);
    for &x in v.data() {
        out.write_f32::<LittleEndian>(x).expect("vec write");
    }
    out
}

/// Write a NIfTI-1 single file (float32). `gz` selects gzip compression.
pub fn write_nifti(v: &Volume3D, path: impl AsRef<Path>, gz: bool) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(v);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        let mut file = file;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// The inverse of a volume's affine; exposed for callers mapping world
/// points back to voxel space alongside the reader.
pub fn world_to_voxel_matrix(v: &Volume3D) -> [[f64; 4]; 4] {
    invert_affine(v.affine()).expect("affine invertible by construction")
}
