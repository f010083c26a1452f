//! Soft ground-truth fusion: field-of-view mask construction by axial
//! dilation, FOV-weighted averaging of registered segmentations in the
//! reference space, and inverse-warping back to each contrast's native
//! space.
//!
//! Warped FOV masks are kept fractional and used directly as weights, so
//! coverage edges contribute partial weight. Contrast entries are summed in
//! sorted contrast-id order for bit-reproducible results.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::registration::{apply_warp, SliceTransformStack};
use crate::volume::{resample_to_grid, BinaryMask, Interp, SoftMask};

/// One contrast feeding the fusion: native-space segmentation, its warp to
/// the reference grid, and optionally a precomputed native FOV mask. When
/// `fov` is absent it is built with [`make_fov_mask`].
#[derive(Debug, Clone)]
pub struct FusionEntry {
    pub contrast: String,
    pub seg: BinaryMask,
    pub warp_to_ref: SliceTransformStack,
    pub fov: Option<BinaryMask>,
}

/// The full input set for one participant.
#[derive(Debug, Clone)]
pub struct FusionInput {
    pub entries: Vec<FusionEntry>,
}

/// Fusion output: the unique soft mask in reference space plus its
/// inverse-warped copy in every contrast's native space, and the fraction
/// of the reference grid each contrast's FOV covers.
#[derive(Debug, Clone)]
pub struct SoftGtBundle {
    pub reference_soft: SoftMask,
    pub native_soft: BTreeMap<String, SoftMask>,
    pub fov_coverage: BTreeMap<String, f64>,
}

/// Per-axial-slice binary dilation of `seg` with a Euclidean disk of
/// `dilation_radius_vox`. Empty slices lying between nonempty ones take the
/// union of their nearest dilated neighbours so the FOV covers the mask's
/// full superior-inferior extent. An entirely empty segmentation yields an
/// empty FOV (with a warning).
pub fn make_fov_mask(seg: &BinaryMask, dilation_radius_vox: usize) -> BinaryMask {
    let (nx, ny, nz) = seg.dims();
    let r = dilation_radius_vox as i64;
    let mut offsets = Vec::new();
    for dj in -r..=r {
        for di in -r..=r {
            if di * di + dj * dj <= r * r {
                offsets.push((di, dj));
            }
        }
    }

    let plane = nx * ny;
    let mut out = vec![0.0f32; plane * nz];
    let mut nonempty = Vec::new();
    for k in 0..nz {
        let mut any = false;
        for j in 0..ny {
            for i in 0..nx {
                if seg.at(i, j, k) == 0.0 {
                    continue;
                }
                any = true;
                for &(di, dj) in &offsets {
                    let x = i as i64 + di;
                    let y = j as i64 + dj;
                    if x >= 0 && y >= 0 && x < nx as i64 && y < ny as i64 {
                        out[x as usize + nx * (y as usize + ny * k)] = 1.0;
                    }
                }
            }
        }
        if any {
            nonempty.push(k);
        }
    }

    if nonempty.is_empty() {
        log::warn!("make_fov_mask: segmentation is empty; FOV is empty");
    } else {
        // Bridge interior gaps with the union of the nearest dilated slices.
        let first = nonempty[0];
        let last = *nonempty.last().unwrap();
        for k in first..=last {
            if nonempty.binary_search(&k).is_ok() {
                continue;
            }
            let below = *nonempty.iter().rev().find(|&&z| z < k).unwrap();
            let above = *nonempty.iter().find(|&&z| z > k).unwrap();
            for p in 0..plane {
                if out[p + plane * below] == 1.0 || out[p + plane * above] == 1.0 {
                    out[p + plane * k] = 1.0;
                }
            }
        }
    }

    BinaryMask::new(
        seg.volume()
            .with_data(out)
            .expect("same-length buffer"),
    )
    .expect("dilation produces binary values")
}

/// One contrast already resampled and warped into the reference grid.
#[derive(Debug, Clone)]
pub struct RefEntry {
    pub contrast: String,
    pub soft_seg: SoftMask,
    pub fov: SoftMask,
}

/// FOV-weighted voxelwise mean:
/// `out = sum(fov_c * seg_c) / sum(fov_c)` where the denominator is
/// positive, 0 elsewhere. Entries are accumulated in sorted contrast-id
/// order regardless of input order.
pub fn fuse_weighted(entries: &[RefEntry]) -> Result<SoftMask> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument(
            "fuse_weighted needs at least one entry".into(),
        ));
    }
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[a].contrast.cmp(&entries[b].contrast));

    let grid = entries[order[0]].soft_seg.volume();
    for e in entries {
        if !e.soft_seg.same_grid(grid) || !e.fov.same_grid(grid) {
            return Err(Error::InvalidArgument(format!(
                "fuse_weighted: contrast {:?} is not on the shared reference grid",
                e.contrast
            )));
        }
    }

    let n = grid.len();
    let mut num = vec![0.0f64; n];
    let mut den = vec![0.0f64; n];
    for &idx in &order {
        let seg = entries[idx].soft_seg.data();
        let fov = entries[idx].fov.data();
        for i in 0..n {
            let w = fov[i] as f64;
            num[i] += w * seg[i] as f64;
            den[i] += w;
        }
    }
    let data: Vec<f32> = num
        .iter()
        .zip(&den)
        .map(|(&s, &w)| if w > 0.0 { (s / w) as f32 } else { 0.0 })
        .collect();
    Ok(SoftMask::clamped(
        grid.with_data(data).expect("same-length buffer"),
    ))
}

fn with_contrast<T>(contrast: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("contrast {contrast}: {m}")),
        other => other,
    })
}

/// Run the full fusion pipeline: build FOV masks, bring segmentations and
/// FOVs onto the reference grid (linear), average with FOV weights, then
/// inverse-warp the unique soft mask back to every native grid. All outputs
/// are clamped to [0, 1].
pub fn generate_soft_gt(
    input: &FusionInput,
    ref_contrast: &str,
    dilation_radius_vox: usize,
) -> Result<SoftGtBundle> {
    if input.entries.is_empty() {
        return Err(Error::InvalidArgument(
            "fusion input has no entries".into(),
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    for e in &input.entries {
        if !seen.insert(e.contrast.clone()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate contrast {:?} in fusion input",
                e.contrast
            )));
        }
    }
    let ref_entry = input
        .entries
        .iter()
        .find(|e| e.contrast == ref_contrast)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "reference contrast {ref_contrast:?} absent from fusion input"
            ))
        })?;
    let ref_grid = ref_entry.seg.volume().clone();

    let mut order: Vec<&FusionEntry> = input.entries.iter().collect();
    order.sort_by(|a, b| a.contrast.cmp(&b.contrast));

    let mut ref_entries = Vec::with_capacity(order.len());
    let mut fov_coverage = BTreeMap::new();
    for e in &order {
        let fov_native = match &e.fov {
            Some(f) => {
                with_contrast(
                    &e.contrast,
                    validate_fov_covers_seg(&e.seg, f).map(|_| ()),
                )?;
                f.clone()
            }
            None => make_fov_mask(&e.seg, dilation_radius_vox),
        };
        let seg_on_ref = resample_to_grid(e.seg.volume(), &ref_grid, Interp::Linear);
        let fov_on_ref = resample_to_grid(fov_native.volume(), &ref_grid, Interp::Linear);
        let seg_ref = with_contrast(
            &e.contrast,
            apply_warp(&seg_on_ref, &e.warp_to_ref, Interp::Linear),
        )?;
        let fov_ref = with_contrast(
            &e.contrast,
            apply_warp(&fov_on_ref, &e.warp_to_ref, Interp::Linear),
        )?;
        let fov_soft = SoftMask::clamped(fov_ref);
        let mean_cov =
            fov_soft.data().iter().map(|&x| x as f64).sum::<f64>() / fov_soft.len() as f64;
        fov_coverage.insert(e.contrast.clone(), mean_cov);
        ref_entries.push(RefEntry {
            contrast: e.contrast.clone(),
            soft_seg: SoftMask::clamped(seg_ref),
            fov: fov_soft,
        });
    }

    let reference_soft = fuse_weighted(&ref_entries)?;

    let mut native_soft = BTreeMap::new();
    for e in &order {
        let inv = e.warp_to_ref.invert();
        let back = with_contrast(
            &e.contrast,
            apply_warp(reference_soft.volume(), &inv, Interp::Linear),
        )?;
        let native = resample_to_grid(&back, e.seg.volume(), Interp::Linear);
        native_soft.insert(e.contrast.clone(), SoftMask::clamped(native));
    }

    Ok(SoftGtBundle {
        reference_soft,
        native_soft,
        fov_coverage,
    })
}

fn validate_fov_covers_seg(seg: &BinaryMask, fov: &BinaryMask) -> Result<()> {
    if !seg.same_grid(fov.volume()) {
        return Err(Error::InvalidArgument(
            "seg and FOV must share the native grid".into(),
        ));
    }
    for (s, f) in seg.data().iter().zip(fov.data()) {
        if *s == 1.0 && *f != 1.0 {
            return Err(Error::InvalidArgument(
                "FOV mask does not cover the segmentation".into(),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::SliceTransformStack;
    use crate::volume::Volume3D;

    fn binary(dims: (usize, usize, usize), set: &[(usize, usize, usize)]) -> BinaryMask {
        let mut data = vec![0.0f32; dims.0 * dims.1 * dims.2];
        for &(i, j, k) in set {
            data[i + dims.0 * (j + dims.1 * k)] = 1.0;
        }
        BinaryMask::new(Volume3D::from_parts(dims, (1.0, 1.0, 1.0), data).unwrap()).unwrap()
    }

    fn soft_from(volume: &Volume3D, data: Vec<f32>) -> SoftMask {
        SoftMask::new(volume.with_data(data).unwrap()).unwrap()
    }

    #[test]
    fn fov_radius_zero_is_seg() {
        let seg = binary((6, 6, 3), &[(2, 2, 0), (3, 3, 1), (2, 4, 2)]);
        let fov = make_fov_mask(&seg, 0);
        assert_eq!(fov.data(), seg.data());
    }

    #[test]
    fn fov_radius_one_plus_shape() {
        let seg = binary((5, 5, 1), &[(2, 2, 0)]);
        let fov = make_fov_mask(&seg, 1);
        let on: Vec<(usize, usize)> = (0..5)
            .flat_map(|j| (0..5).map(move |i| (i, j)))
            .filter(|&(i, j)| fov.at(i, j, 0) == 1.0)
            .collect();
        assert_eq!(on, vec![(2, 1), (1, 2), (2, 2), (3, 2), (2, 3)]);
    }

    #[test]
    fn fov_bridges_interior_gap() {
        let seg = binary((7, 7, 5), &[(2, 2, 2), (4, 4, 4)]);
        let fov = make_fov_mask(&seg, 1);
        // Slice 3 = union of dilated slices 2 and 4.
        for &(i, j) in &[(2usize, 1usize), (1, 2), (2, 2), (3, 2), (2, 3)] {
            assert_eq!(fov.at(i, j, 3), 1.0);
        }
        for &(i, j) in &[(4usize, 3usize), (3, 4), (4, 4), (5, 4), (4, 5)] {
            assert_eq!(fov.at(i, j, 3), 1.0);
        }
        // Outside the S-I extent stays empty.
        assert!(    (0..7).all(|j| (0..7).all(|i| fov.at(i, j, 0) == 0.0)));
        assert!((0..7).all(|j| (0..7).all(|i| fov.at(i, j, 1) == 0.0)));
    }

    #[test]
    fn fov_empty_seg_empty_fov() {
        let seg = binary((4, 4, 2), &[]);
        let fov = make_fov_mask(&seg, 3);
        assert!(fov.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fuse_identical_inputs_is_input() {
        let grid = Volume3D::filled((4, 4, 2), (1.0, 1.0, 1.0), 0.0);
        let seg: Vec<f32> = (0..32).map(|i| (i % 3 == 0) as u8 as f32).collect();
        let full = vec![1.0f32; 32];
        let entries = vec![
            RefEntry {
                contrast: "T1w".into(),
                soft_seg: soft_from(&grid, seg.clone()),
                fov: soft_from(&grid, full.clone()),
            },
            RefEntry {
                contrast: "T2w".into(),
                soft_seg: soft_from(&grid, seg.clone()),
                fov: soft_from(&grid, full),
            },
        ];
        let out = fuse_weighted(&entries).unwrap();
        assert_eq!(out.data(), &seg[..]);
    }

    #[test]
    fn fuse_weighting_rules() {
        let grid = Volume3D::filled((1, 1, 1), (1.0, 1.0, 1.0), 0.0);
        let e = |seg: f32, fov: f32, name: &str| RefEntry {
            contrast: name.into(),
            soft_seg: soft_from(&grid, vec![seg]),
            fov: soft_from(&grid, vec![fov]),
        };
        // Equal FOVs: unweighted mean.
        let half = fuse_weighted(&[e(1.0, 1.0, "A"), e(0.0, 1.0, "B")]).unwrap();
        assert_eq!(half.data(), &[0.5]);
        // Only A's FOV covers the voxel.
        let only_a = fuse_weighted(&[e(1.0, 1.0, "A"), e(0.0, 0.0, "B")]).unwrap();
        assert_eq!(only_a.data(), &[1.0]);
        // Nobody covers: 0.
        let nobody = fuse_weighted(&[e(1.0, 0.0, "A"), e(1.0, 0.0, "B")]).unwrap();
        assert_eq!(nobody.data(), &[0.0]);
    }

    #[test]
    fn fuse_permutation_invariant_bit_exact() {
        let grid = Volume3D::filled((3, 3, 1), (1.0, 1.0, 1.0), 0.0);
        let mk = |name: &str, seed: u64| {
            let mut state = seed;
            let mut vals = Vec::new();
            let mut fovs = Vec::new();
            for _ in 0..9 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                vals.push(((state >> 33) & 0xff) as f32 / 255.0);
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                fovs.push(((state >> 33) & 0xff) as f32 / 255.0);
            }
            RefEntry {
                contrast: name.into(),
                soft_seg: soft_from(&grid, vals),
                fov: soft_from(&grid, fovs),
            }
        };
        let a = mk("DWI", 1);
        let b = mk("T1w", 2);
        let c = mk("T2w", 3);
        let forward = fuse_weighted(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let shuffled = fuse_weighted(&[c, a, b]).unwrap();
        assert_eq!(forward.data(), shuffled.data());
    }

    #[test]
    fn fuse_monotonic_in_seg_value() {
        let grid = Volume3D::filled((1, 1, 1), (1.0, 1.0, 1.0), 0.0);
        let base = fuse_weighted(&[
            RefEntry {
                contrast: "A".into(),
                soft_seg: soft_from(&grid, vec![0.3]),
                fov: soft_from(&grid, vec![0.8]),
            },
            RefEntry {
                contrast: "B".into(),
                soft_seg: soft_from(&grid, vec![0.6]),
                fov: soft_from(&grid, vec![0.5]),
            },
        ])
        .unwrap();
        let bumped = fuse_weighted(&[
            RefEntry {
                contrast: "A".into(),
                soft_seg: soft_from(&grid, vec![0.5]),
                fov: soft_from(&grid, vec![0.8]),
            },
            RefEntry {
                contrast: "B".into(),
                soft_seg: soft_from(&grid, vec![0.6]),
                fov: soft_from(&grid, vec![0.5]),
            },
        ])
        .unwrap();
        assert!(bumped.data()[0] >= base.data()[0]);
    }

    #[test]
    fn single_contrast_identity_warp_round_trip() {
        let seg = binary((6, 6, 3), &[(2, 2, 0), (2, 3, 1), (3, 3, 2), (2, 2, 1)]);
        let warp = SliceTransformStack::identity(seg.volume());
        let input = FusionInput {
            entries: vec![FusionEntry {
                contrast: "T2w".into(),
                seg: seg.clone(),
                warp_to_ref: warp,
                fov: None,
            }],
        };
        let bundle = generate_soft_gt(&input, "T2w", 2).unwrap();
        assert_eq!(bundle.reference_soft.data(), seg.data());
        assert_eq!(bundle.native_soft["T2w"].data(), seg.data());
        assert!(bundle.fov_coverage["T2w"] > 0.0);
    }

    #[test]
    fn two_disjoint_contrasts_full_fov_average() {
        let dims = (6, 6, 2);
        let a = binary(dims, &[(1, 1, 0), (1, 2, 0), (1, 1, 1), (1, 2, 1)]);
        let b = binary(dims, &[(4, 4, 0), (4, 3, 0), (4, 4, 1), (4, 3, 1)]);
        let full = BinaryMask::new(Volume3D::filled(dims, (1.0, 1.0, 1.0), 1.0)).unwrap();
        let warp = SliceTransformStack::identity(a.volume());
        let input = FusionInput {
            entries: vec![
                FusionEntry {
                    contrast: "T1w".into(),
                    seg: a.clone(),
                    warp_to_ref: warp.clone(),
                    fov: Some(full.clone()),
                },
                FusionEntry {
                    contrast: "T2w".into(),
                    seg: b.clone(),
                    warp_to_ref: warp,
                    fov: Some(full),
                },
            ],
        };
        let bundle = generate_soft_gt(&input, "T1w", 0).unwrap();
        for idx in 0..a.len() {
            let expect = if a.data()[idx] == 1.0 || b.data()[idx] == 1.0 {
                0.5
            } else {
                0.0
            };
            assert_eq!(bundle.reference_soft.data()[idx], expect);
        }
    }

    #[test]
    fn oracle_brute_force_weighted_mean() {
        // Random 8^3 binary segs/FOVs over identity warps must equal the
        // voxelwise weighted mean computed directly.
        let dims = (8, 8, 8);
        let mut state = 2024u64;
        let mut bit = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 62) & 1
        };
        for trial in 0..20 {
            let n_contrasts = 2 + trial % 5;
            let grid = Volume3D::filled(dims, (1.0, 1.0, 1.0), 0.0);
            let warp = SliceTransformStack::identity(&grid);
            let mut entries = Vec::new();
            let mut segs = Vec::new();
            let mut fovs = Vec::new();
            for c in 0..n_contrasts {
                let seg: Vec<f32> = (0..512).map(|_| bit() as f32).collect();
                let fov: Vec<f32> = seg
                    .iter()
                    .map(|&s| if s == 1.0 { 1.0 } else { bit() as f32 })
                    .collect();
                segs.push(seg.clone());
                fovs.push(fov.clone());
                entries.push(FusionEntry {
                    contrast: format!("C{c}"),
                    seg: BinaryMask::new(grid.with_data(seg).unwrap()).unwrap(),
                    warp_to_ref: warp.clone(),
                    fov: Some(BinaryMask::new(grid.with_data(fov).unwrap()).unwrap()),
                });
            }
            let bundle =
                generate_soft_gt(&FusionInput { entries }, "C0", 0).unwrap();
            for v in 0..512 {
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for c in 0..n_contrasts {
                    num += (fovs[c][v] * segs[c][v]) as f64;
                    den += fovs[c][v] as f64;
                }
                // Volumes carry 32-bit floats, so the oracle value is the
                // weighted mean rounded to f32; the 1e-12 bound then checks
                // the computation path is exact.
                let want = if den > 0.0 { (num / den) as f32 } else { 0.0 } as f64;
                let got = bundle.reference_soft.data()[v] as f64;
                assert!(
                    (got - want).abs() <= 1e-12,
                    "trial {trial} voxel {v}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn missing_reference_contrast_rejected() {
        let seg = binary((4, 4, 1), &[(1, 1, 0)]);
        let warp = SliceTransformStack::identity(seg.volume());
        let input = FusionInput {
            entries: vec![FusionEntry {
                contrast: "T1w".into(),
                seg,
                warp_to_ref: warp,
                fov: None,
            }],
        };
        assert!(generate_soft_gt(&input, "T2w", 1).is_err());
    }

    #[test]
    fn fov_must_cover_seg() {
        let dims = (4, 4, 1);
        let seg = binary(dims, &[(1, 1, 0), (2, 2, 0)]);
        let bad_fov = binary(dims, &[(1, 1, 0)]);
        let warp = SliceTransformStack::identity(seg.volume());
        let input = FusionInput {
            entries: vec![FusionEntry {
                contrast: "T1w".into(),
                seg,
                warp_to_ref: warp,
                fov: Some(bad_fov),
            }],
        };
        let err = generate_soft_gt(&input, "T1w", 0).unwrap_err();
        assert!(err.to_string().contains("T1w"));
    }
}
