//! Property tests for the cross-cutting invariants: value-preserving
//! reorientation, constant-field resampling, normalization idempotence,
//! crop/pad round trips, NIfTI round trips, fusion range/idempotence, loss
//! nonnegativity and warp value-set preservation.

use proptest::prelude::*;

use softcord_core::fusion::{fuse_weighted, RefEntry};
use softcord_core::loss::{awing_loss, norm_relu, AWingParams, Reduction, VoxelTensor};
use softcord_core::nifti::{read_nifti, write_nifti};
use softcord_core::registration::{apply_warp, SliceTransform, SliceTransformStack};
use softcord_core::stats::{bonferroni, wilcoxon_signed_rank};
use softcord_core::volume::{
    center_crop_or_pad, reorient, resample, znormalize, BinaryMask, Interp, SoftMask, Volume3D,
};

fn small_dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..7, 1usize..7, 1usize..7)
}

fn volume_strategy() -> impl Strategy<Value = Volume3D> {
    (small_dims(), any::<u64>()).prop_map(|(dims, seed)| {
        let n = dims.0 * dims.1 * dims.2;
        let mut state = seed | 1;
        let data: Vec<f32> = (0..n)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                ((state >> 40) as f32 / (1u64 << 24) as f32) * 20.0 - 10.0
            })
            .collect();
        Volume3D::from_parts(dims, (1.0, 1.0, 1.0), data).unwrap()
    })
}

fn orientation_code() -> impl Strategy<Value = String> {
    (0usize..6, 0usize..2, prop::bool::ANY, prop::bool::ANY, prop::bool::ANY).prop_map(
        |(perm, pick, f0, f1, f2)| {
            let perms = [
                [0usize, 1, 2],
                [0, 2, 1],
                [1, 0, 2],
                [1, 2, 0],
                [2, 0, 1],
                [2, 1, 0],
            ];
            let _ = pick;
            let axes = ["RL", "AP", "SI"];
            let flips = [f0, f1, f2];
            perms[perm]
                .iter()
                .zip(flips)
                .map(|(&a, f)| axes[a].chars().nth(f as usize).unwrap())
                .collect()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reorient_preserves_values_and_inverts(v in volume_strategy(), code in orientation_code()) {
        let original = v.orientation().code();
        let out = reorient(&v, &code).unwrap();
        let mut a: Vec<u32> = v.data().iter().map(|x| x.to_bits()).collect();
        let mut b: Vec<u32> = out.data().iter().map(|x| x.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        let back = reorient(&out, &original).unwrap();
        prop_assert_eq!(back.data(), v.data());
    }

    #[test]
    fn resample_constant_field_is_constant(
        dims in small_dims(),
        value in -10.0f32..10.0,
        sx in 0.3f64..3.0,
        sy in 0.3f64..3.0,
        sz in 0.3f64..3.0,
        scheme_pick in 0usize..3,
    ) {
        let v = Volume3D::filled(dims, (1.0, 1.0, 1.0), value);
        let scheme = [Interp::Cubic, Interp::Linear, Interp::Nearest][scheme_pick];
        let out = resample(&v, (sx, sy, sz), scheme).unwrap();
        prop_assert!(out.data().iter().all(|&x| x == value));
    }

    #[test]
    fn znormalize_is_idempotent(v in volume_strategy()) {
        prop_assume!(v.len() > 1);
        let spread = v.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max)
            - v.data().iter().cloned().fold(f32::INFINITY, f32::min);
        prop_assume!(spread > 1e-3);
        let once = znormalize(&v);
        let twice = znormalize(&once);
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn crop_then_restore_recovers_window(v in volume_strategy(), t in small_dims()) {
        let target = (t.0.min(v.dims().0), t.1.min(v.dims().1), t.2.min(v.dims().2));
        let cropped = center_crop_or_pad(&v, target, -7.0).unwrap();
        let back = center_crop_or_pad(&cropped, v.dims(), -7.0).unwrap();
        let off = (
            (v.dims().0 as i64 - target.0 as i64) / 2,
            (v.dims().1 as i64 - target.1 as i64) / 2,
            (v.dims().2 as i64 - target.2 as i64) / 2,
        );
        for k in 0..target.2 {
            for j in 0..target.1 {
                for i in 0..target.0 {
                    let oi = (i as i64 + off.0) as usize;
                    let oj = (j as i64 + off.1) as usize;
                    let ok = (k as i64 + off.2) as usize;
                    prop_assert_eq!(back.at(oi, oj, ok), v.at(oi, oj, ok));
                }
            }
        }
    }

    #[test]
    fn nifti_round_trip(v in volume_strategy(), gz in prop::bool::ANY) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if gz { "v.nii.gz" } else { "v.nii" });
        write_nifti(&v, &path, gz).unwrap();
        let back = read_nifti(&path).unwrap();
        prop_assert_eq!(back.dims(), v.dims());
        prop_assert_eq!(back.data(), v.data());
    }

    #[test]
    fn fusion_stays_in_unit_range_and_is_idempotent(
        dims in small_dims(),
        seed in any::<u64>(),
        copies in 1usize..5,
    ) {
        let n = dims.0 * dims.1 * dims.2;
        let mut state = seed | 1;
        let mut unit = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 40) as f32 / (1u64 << 24) as f32
        };
        let grid = Volume3D::filled(dims, (1.0, 1.0, 1.0), 0.0);
        let seg: Vec<f32> = (0..n).map(|_| unit()).collect();
        let fov: Vec<f32> = (0..n).map(|_| unit()).collect();
        let entries: Vec<RefEntry> = (0..copies)
            .map(|c| RefEntry {
                contrast: format!("C{c}"),
                soft_seg: SoftMask::new(grid.with_data(seg.clone()).unwrap()).unwrap(),
                fov: SoftMask::new(grid.with_data(fov.clone()).unwrap()).unwrap(),
            })
            .collect();
        let fused = fuse_weighted(&entries).unwrap();
        for (out, (s, f)) in fused.data().iter().zip(seg.iter().zip(&fov)) {
            prop_assert!((0.0..=1.0).contains(out));
            // K copies of one entry average to that entry wherever its FOV
            // weight is positive, and to 0 elsewhere.
            if *f > 0.0 {
                prop_assert!((out - s).abs() < 1e-6);
            } else {
                prop_assert_eq!(*out, 0.0);
            }
        }
    }

    #[test]
    fn awing_loss_nonnegative(
        y in prop::collection::vec(0.0f64..=1.0, 1..40),
        seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let yhat: Vec<f64> = y
            .iter()
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 3.0 - 1.0
            })
            .collect();
        let p = AWingParams::default();
        let yt = VoxelTensor::from_slice(&y);
        let ht = VoxelTensor::from_slice(&yhat);
        match awing_loss(&yt, &ht, &p, Reduction::None).unwrap() {
            softcord_core::loss::LossValue::PerVoxel(v) => {
                for &x in v.data() {
                    prop_assert!(x >= 0.0);
                }
            }
            _ => unreachable!(),
        }
        let normed = norm_relu(&ht);
        let max = normed.data().iter().cloned().fold(0.0f64, f64::max);
        prop_assert!(max == 0.0 || max == 1.0);
        let again = norm_relu(&normed);
        prop_assert_eq!(again.data(), normed.data());
    }

    #[test]
    fn warp_nearest_preserves_binary_value_set(
        seed in any::<u64>(),
        tx in -3.0f64..3.0,
        ty in -3.0f64..3.0,
        rot in -20.0f64..20.0,
    ) {
        let dims = (12, 12, 3);
        let mut state = seed | 1;
        let data: Vec<f32> = (0..12 * 12 * 3)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                ((state >> 62) & 1) as f32
            })
            .collect();
        let v = BinaryMask::new(
            Volume3D::from_parts(dims, (1.0, 1.0, 1.0), data).unwrap(),
        )
        .unwrap();
        let mut stack = SliceTransformStack::identity(v.volume());
        for s in stack.slices.iter_mut() {
            *s = SliceTransform {
                tx_mm: tx,
                ty_mm: ty,
                rot_deg: rot,
                center_mm: (5.5, 5.5),
                empty: false,
            };
        }
        let out = apply_warp(v.volume(), &stack, Interp::Nearest).unwrap();
        prop_assert!(out.data().iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn wilcoxon_two_sided_is_antisymmetric(
        pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 6..20),
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| (p.0 * 4.0).round() / 4.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| (p.1 * 4.0).round() / 4.0).collect();
        match (wilcoxon_signed_rank(&x, &y), wilcoxon_signed_rank(&y, &x)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.statistic, b.statistic);
                prop_assert_eq!(a.p_value, b.p_value);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "asymmetric outcomes: {:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn bonferroni_clamps_and_orders(ps in prop::collection::vec(0.0f64..=1.0, 0..12)) {
        let out = bonferroni(&ps);
        prop_assert_eq!(out.len(), ps.len());
        for (raw, adj) in ps.iter().zip(&out) {
            prop_assert!(*adj <= 1.0 + 1e-15);
            prop_assert!(*adj >= *raw - 1e-15);
        }
    }
}
