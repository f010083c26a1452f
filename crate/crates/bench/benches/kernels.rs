//! Benchmarks for the hot kernels: loss/gradient evaluation, fusion,
//! slice-wise registration and warping, resampling and the augmentation
//! pipeline.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use softcord_core::augment::{augment_pair, AugmentConfig, SamplePair};
use softcord_core::fusion::{fuse_weighted, RefEntry};
use softcord_core::loss::{awing_grad, awing_loss, norm_relu, AWingParams, Reduction, VoxelTensor};
use softcord_core::registration::{apply_warp, register_com, SliceTransformStack};
use softcord_core::stats::wilcoxon_signed_rank;
use softcord_core::volume::{resample, Interp, SoftMask, Volume3D};

struct Lcg(u64);

impl Lcg {
    fn unit(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn random_volume(dims: (usize, usize, usize), seed: u64) -> Volume3D {
    let mut rng = Lcg(seed);
    let n = dims.0 * dims.1 * dims.2;
    let data: Vec<f32> = (0..n).map(|_| rng.unit() as f32).collect();
    Volume3D::from_parts(dims, (1.0, 1.0, 1.0), data).unwrap()
}

fn blob_volume(dims: (usize, usize, usize)) -> Volume3D {
    let (nx, ny, nz) = dims;
    let mut data = vec![0.0f32; nx * ny * nz];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let d2 = ((i as f64 - nx as f64 / 2.0).powi(2)
                    + (j as f64 - ny as f64 / 2.0).powi(2))
                    / (nx as f64 / 4.0).powi(2);
                data[i + nx * (j + ny * k)] = (-d2).exp() as f32;
            }
        }
    }
    Volume3D::from_parts(dims, (1.0, 1.0, 1.0), data).unwrap()
}

fn bench_loss(c: &mut Criterion) {
    let mut rng = Lcg(7);
    let n = 1 << 20;
    let y: Vec<f64> = (0..n).map(|_| rng.unit()).collect();
    let yhat: Vec<f64> = (0..n).map(|_| rng.unit() * 3.0 - 1.0).collect();
    let yt = VoxelTensor::from_slice(&y);
    let ht = VoxelTensor::from_slice(&yhat);
    let p = AWingParams::default();

    c.bench_function("awing_loss_1m_mean", |b| {
        b.iter(|| awing_loss(black_box(&yt), black_box(&ht), &p, Reduction::Mean).unwrap())
    });
    c.bench_function("awing_grad_1m", |b| {
        b.iter(|| awing_grad(black_box(&yt), black_box(&ht), &p).unwrap())
    });
    c.bench_function("norm_relu_1m", |b| {
        b.iter(|| norm_relu(black_box(&ht)))
    });
}

fn bench_fusion(c: &mut Criterion) {
    let dims = (64, 64, 64);
    let grid = Volume3D::filled(dims, (1.0, 1.0, 1.0), 0.0);
    let entries: Vec<RefEntry> = (0..6)
        .map(|i| {
            let seg = random_volume(dims, 100 + i);
            let fov = random_volume(dims, 200 + i);
            RefEntry {
                contrast: format!("C{i}"),
                soft_seg: SoftMask::clamped(grid.with_data(seg.into_data()).unwrap()),
                fov: SoftMask::clamped(grid.with_data(fov.into_data()).unwrap()),
            }
        })
        .collect();
    c.bench_function("fuse_weighted_6x64cubed", |b| {
        b.iter(|| fuse_weighted(black_box(&entries)).unwrap())
    });
}

fn bench_registration(c: &mut Criterion) {
    let src = blob_volume((64, 64, 16));
    let mut shifted = vec![0.0f32; 64 * 64 * 16];
    for k in 0..16 {
        for j in 0..64 {
            for i in 0..64 {
                let si = (i + 3).min(63);
                let sj = (j + 2).min(63);
                shifted[i + 64 * (j + 64 * k)] = src.at(si, sj, k);
            }
        }
    }
    let tgt = Volume3D::from_parts((64, 64, 16), (1.0, 1.0, 1.0), shifted).unwrap();

    c.bench_function("register_com_64x64x16", |b| {
        b.iter(|| register_com(black_box(&src), black_box(&tgt), 10, 0.5).unwrap())
    });

    let mut stack = SliceTransformStack::identity(&src);
    for s in stack.slices.iter_mut() {
        s.tx_mm = 2.4;
        s.ty_mm = -1.1;
        s.rot_deg = 6.0;
        s.center_mm = (32.0, 32.0);
    }
    c.bench_function("apply_warp_linear_64x64x16", |b| {
        b.iter(|| apply_warp(black_box(&src), &stack, Interp::Linear).unwrap())
    });
}

fn bench_resample(c: &mut Criterion) {
    let v = random_volume((64, 64, 64), 11);
    c.bench_function("resample_cubic_64cubed_to_0p7mm", |b| {
        b.iter(|| resample(black_box(&v), (0.7, 0.7, 0.7), Interp::Cubic).unwrap())
    });
}

fn bench_augment(c: &mut Criterion) {
    let image = blob_volume((32, 32, 16));
    let label = SoftMask::clamped(image.clone());
    let pair = SamplePair::new(image, label).unwrap();
    let cfg = AugmentConfig {
        seed: 3,
        ..Default::default()
    };
    c.bench_function("augment_pair_32x32x16", |b| {
        b.iter(|| augment_pair(black_box(&pair), &cfg))
    });
}

fn bench_stats(c: &mut Criterion) {
    let mut rng = Lcg(5);
    let x: Vec<f64> = (0..25).map(|_| rng.unit() * 10.0).collect();
    let y: Vec<f64> = (0..25).map(|_| rng.unit() * 10.0).collect();
    c.bench_function("wilcoxon_exact_n25", |b| {
        b.iter(|| wilcoxon_signed_rank(black_box(&x), black_box(&y)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_loss,
    bench_fusion,
    bench_registration,
    bench_resample,
    bench_augment,
    bench_stats
);
criterion_main!(benches);
