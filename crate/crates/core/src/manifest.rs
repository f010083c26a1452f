//! Dataset manifest: a JSON file listing, per participant and contrast, the
//! image, segmentation and optional vertebral-level-map paths.
//!
//! ```json
//! {
//!   "participants": [
//!     {
//!       "id": "sub-001",
//!       "records": [
//!         { "contrast": "T1w", "image": "sub-001/t1.nii.gz",
//!           "seg": "sub-001/t1_seg.nii.gz", "levels": "sub-001/levels.nii.gz" }
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. Contrast ids are
//! free-form tokens (e.g. T1w, T2w, T2star, MTon, GRET1w, DWI); ids must not
//! contain commas so they can appear in CSV reports verbatim.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastRecord {
    pub contrast: String,
    pub image: PathBuf,
    pub seg: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticipantEntry {
    pub id: String,
    pub records: Vec<ContrastRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub participants: Vec<ParticipantEntry>,
}

impl DatasetManifest {
    /// Iterate (participant id, record) pairs in manifest order.
    pub fn records(&self) -> impl Iterator<Item = (&str, &ContrastRecord)> {
        self.participants
            .iter()
            .flat_map(|p| p.records.iter().map(move |r| (p.id.as_str(), r)))
    }

    /// All contrast ids present, sorted.
    pub fn contrasts(&self) -> BTreeSet<String> {
        self.records().map(|(_, r)| r.contrast.clone()).collect()
    }

    pub fn record_count(&self) -> usize {
        self.participants.iter().map(|p| p.records.len()).sum()
    }
}

/// A parsed manifest plus the referenced files that do not exist. Missing
/// files are reported, not fatal: batch commands skip and log them.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: DatasetManifest,
    pub missing: Vec<PathBuf>,
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains(',') || s.contains('\n') {
        return Err(Error::Validation(format!(
            "{kind} {s:?} must be non-empty and free of commas/newlines"
        )));
    }
    Ok(())
}

/// Load and validate a manifest. Duplicate participants or (participant,
/// contrast) pairs and reused image/seg paths are validation errors; paths
/// are resolved against the manifest directory and missing files collected.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<LoadedManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen_participants = BTreeSet::new();
    let mut seen_pairs = BTreeSet::new();
    // Image/seg paths are unique per (participant, contrast): a record may
    // reference the same file twice (e.g. scoring a mask against itself),
    // but two records may not share one.
    let mut seen_paths: std::collections::BTreeMap<PathBuf, (String, String)> =
        std::collections::BTreeMap::new();
    let mut missing = Vec::new();

    if manifest.participants.is_empty() {
        log::warn!("{}: manifest lists no participants", path.display());
    }

    for participant in manifest.participants.iter_mut() {
        check_token("participant id", &participant.id)?;
        if !seen_participants.insert(participant.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate participant {:?}",
                participant.id
            )));
        }
        for record in participant.records.iter_mut() {
            check_token("contrast id", &record.contrast)?;
            let key = (participant.id.clone(), record.contrast.clone());
            if !seen_pairs.insert(key) {
                return Err(Error::Validation(format!(
                    "duplicate record for participant {:?}, contrast {:?}",
                    participant.id, record.contrast
                )));
            }
            let pair = (participant.id.clone(), record.contrast.clone());
            let mut resolve = |p: &mut PathBuf, unique: bool| -> Result<()> {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if unique {
                    match seen_paths.get(p) {
                        Some(owner) if owner != &pair => {
                            return Err(Error::Validation(format!(
                                "path {} referenced by both ({}, {}) and ({}, {})",
                                p.display(),
                                owner.0,
                                owner.1,
                                pair.0,
                                pair.1
                            )));
                        }
                        _ => {
                            seen_paths.insert(p.clone(), pair.clone());
                        }
                    }
                }
                if !p.exists() {
                    missing.push(p.clone());
                }
                Ok(())
            };
            resolve(&mut record.image, true)?;
            resolve(&mut record.seg, true)?;
            if let Some(levels) = record.levels.as_mut() {
                // Level maps may be shared across contrasts.
                resolve(levels, false)?;
            }
        }
    }

    Ok(LoadedManifest { manifest, missing })
}

/// Serialize a manifest as pretty JSON.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
