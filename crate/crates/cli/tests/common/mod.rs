//! Shared synthetic-dataset builder for the CLI tests: small multi-contrast
//! cylinders with per-contrast shifts, restricted slice coverage, mixed
//! orientations and a vertebral level map.

use std::path::{Path, PathBuf};
use std::process::Command;

use softcord_core::nifti::write_nifti;
use softcord_core::volume::{reorient, Volume3D};

pub struct ContrastSpec {
    pub name: &'static str,
    pub dims: (usize, usize, usize),
    pub spacing: (f64, f64, f64),
    /// Cylinder center in voxel units.
    pub center: (f64, f64),
    pub radius_vox: f64,
    /// Slices (inclusive-exclusive) where the cord is visible.
    pub coverage: (usize, usize),
    /// Storage orientation of the written files.
    pub orientation: &'static str,
}

pub fn default_contrasts() -> Vec<ContrastSpec> {
    vec![
        ContrastSpec {
            name: "T2w",
            dims: (24, 24, 10),
            spacing: (1.0, 1.0, 1.0),
            center: (12.0, 12.0),
            radius_vox: 3.5,
            coverage: (1, 9),
            orientation: "RAS",
        },
        ContrastSpec {
            name: "T1w",
            dims: (24, 24, 10),
            spacing: (1.0, 1.0, 1.0),
            center: (14.0, 13.0),
            radius_vox: 3.5,
            coverage: (0, 10),
            orientation: "LPI",
        },
        ContrastSpec {
            name: "T2star",
            dims: (20, 20, 8),
            spacing: (1.2, 1.2, 1.25),
            center: (10.0, 10.0),
            radius_vox: 3.0,
            coverage: (2, 7),
            orientation: "RAS",
        },
    ]
}

fn cylinder(spec: &ContrastSpec, participant_shift: f64) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (nx, ny, nz) = spec.dims;
    let mut seg = vec![0.0f32; nx * ny * nz];
    let mut img = vec![0.0f32; nx * ny * nz];
    let mut levels = vec![0.0f32; nx * ny * nz];
    let cx = spec.center.0 + participant_shift;
    let cy = spec.center.1 - participant_shift;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * (j + ny * k);
                let d2 = (i as f64 - cx).powi(2) + (j as f64 - cy).powi(2);
                let inside = d2 <= spec.radius_vox * spec.radius_vox;
                let covered = k >= spec.coverage.0 && k < spec.coverage.1;
                if inside && covered {
                    seg[idx] = 1.0;
                }
                img[idx] = 20.0 + if inside && covered { 100.0 } else { 0.0 } + i as f32 * 0.1;
                levels[idx] = if k < nz / 2 { 2.0 } else { 3.0 };
            }
        }
    }
    (img, seg, levels)
}

/// Write the dataset and manifest; returns the manifest path.
pub fn build_dataset(root: &Path, participants: usize) -> PathBuf {
    let contrasts = default_contrasts();
    let mut entries = Vec::new();
    for p in 0..participants {
        let id = format!("sub-{:02}", p + 1);
        let dir = root.join(&id);
        std::fs::create_dir_all(&dir).unwrap();
        let mut records = Vec::new();
        for spec in &contrasts {
            let (img, seg, levels) = cylinder(spec, p as f64 * 0.8);
            let write = |name: &str, data: Vec<f32>| -> PathBuf {
                let v = Volume3D::from_parts(spec.dims, spec.spacing, data).unwrap();
                let v = reorient(&v, spec.orientation).unwrap();
                let path = dir.join(format!("{}_{name}.nii.gz", spec.name));
                write_nifti(&v, &path, true).unwrap();
                path
            };
            let image = write("image", img);
            let segp = write("seg", seg);
            let levelsp = write("levels", levels);
            records.push(format!(
                r#"{{ "contrast": "{}", "image": "{}", "seg": "{}", "levels": "{}" }}"#,
                spec.name,
                image.display(),
                segp.display(),
                levelsp.display()
            ));
        }
        entries.push(format!(
            r#"{{ "id": "{id}", "records": [ {} ] }}"#,
            records.join(", ")
        ));
    }
    let manifest = format!(r#"{{ "participants": [ {} ] }}"#, entries.join(", "));
    let path = root.join("manifest.json");
    std::fs::write(&path, manifest).unwrap();
    path
}

/// Manifest for `metrics`: fused native soft masks as predictions against
/// the original segmentations.
pub fn build_metrics_manifest(root: &Path, fused: &Path, participants: usize) -> PathBuf {
    let contrasts = default_contrasts();
    let mut entries = Vec::new();
    for p in 0..participants {
        let id = format!("sub-{:02}", p + 1);
        let mut records = Vec::new();
        for spec in &contrasts {
            records.push(format!(
                r#"{{ "contrast": "{}", "image": "{}", "seg": "{}", "levels": "{}" }}"#,
                spec.name,
                fused.join(&id).join(format!("softseg_{}.nii.gz", spec.name)).display(),
                root.join(&id).join(format!("{}_seg.nii.gz", spec.name)).display(),
                root.join(&id).join(format!("{}_levels.nii.gz", spec.name)).display()
            ));
        }
        entries.push(format!(
            r#"{{ "id": "{id}", "records": [ {} ] }}"#,
            records.join(", ")
        ));
    }
    let manifest = format!(r#"{{ "participants": [ {} ] }}"#, entries.join(", "));
    let path = root.join("metrics_manifest.json");
    std::fs::write(&path, manifest).unwrap();
    path
}

pub fn softcord() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_softcord"));
    cmd.env("RUST_LOG", "error");
    cmd
}

/// All regular files under a directory, relative paths sorted.
pub fn file_tree(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            if path.is_dir() {
                walk(&path, base, out);
            } else {
                out.push(path.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

/// Byte-for-byte equality of two directory trees.
pub fn assert_trees_identical(a: &Path, b: &Path) {
    let ta = file_tree(a);
    let tb = file_tree(b);
    assert_eq!(ta, tb, "directory listings differ");
    for rel in &ta {
        let ba = std::fs::read(a.join(rel)).unwrap();
        let bb = std::fs::read(b.join(rel)).unwrap();
        assert_eq!(ba, bb, "file {} differs", rel.display());
    }
}
