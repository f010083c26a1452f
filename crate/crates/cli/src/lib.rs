//! Command-line pipeline: soft ground-truth fusion (`fuse-gt`), metric
//! evaluation (`metrics`), augmentation (`augment`) and panel statistics
//! (`stats`).
//!
//! Every subcommand is deterministic given its inputs, configuration and
//! seed. Participant-level work runs in parallel (`--jobs`), with results
//! gathered and sorted by participant id before anything is written. Exit
//! codes: 0 success, 1 validation error, 2 I/O error, 3 internal error.
//! Log verbosity is controlled by the `RUST_LOG` environment variable.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use softcord_core::augment::{augment_pair, AugmentConfig, SamplePair};
use softcord_core::error::Error as CoreError;
use softcord_core::fusion::{generate_soft_gt, make_fov_mask, FusionEntry, FusionInput};
use softcord_core::manifest::{load_manifest, ContrastRecord, DatasetManifest};
use softcord_core::metrics::{
    abs_csa_error, average_surface_distance, csa, dice, relative_volume_error, std_csa_with,
    ContrastPanel, StdFlavor,
};
use softcord_core::nifti::{read_nifti, write_nifti};
use softcord_core::registration::register_com;
use softcord_core::report::{
    read_panel_csv, write_coverage_csv, write_metrics_csv, write_panel_csv, write_wilcoxon_csv,
    MetricsRow, WilcoxonRow,
};
use softcord_core::stats::{bonferroni, wilcoxon_signed_rank};
use softcord_core::volume::{reorient, resample_to_grid, BinaryMask, Interp, SoftMask};

/// Default base seed when the flag is not given.
pub const DEFAULT_SEED: u64 = 42;

/// Registration schedule matching the reference pipeline.
pub const REGISTRATION_ITERATIONS: usize = 10;
pub const REGISTRATION_STEP: f64 = 0.5;

#[derive(Parser, Debug)]
#[command(
    name = "softcord",
    about = "Soft ground-truth fusion, augmentation and morphometric evaluation for spinal cord MRI"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StdChoice {
    Population,
    Sample,
}

impl From<StdChoice> for StdFlavor {
    fn from(c: StdChoice) -> StdFlavor {
        match c {
            StdChoice::Population => StdFlavor::Population,
            StdChoice::Sample => StdFlavor::Sample,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fuse per-contrast segmentations into a unique soft ground truth.
    FuseGt {
        /// Dataset manifest (JSON); each record's `seg` is a binary mask.
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Contrast whose space all segmentations are fused in.
        #[arg(long = "ref-contrast")]
        ref_contrast: String,
        /// Comma-separated contrast subset (default: all in the manifest).
        #[arg(long, value_delimiter = ',')]
        contrasts: Option<Vec<String>>,
        /// In-plane FOV dilation radius in voxels.
        #[arg(long = "dilation-radius", default_value_t = 25)]
        dilation_radius: usize,
        /// Worker threads (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Evaluate predictions against ground truth and write CSV reports.
    /// In the manifest, `image` is the (soft) prediction and `seg` the GT.
    Metrics {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Binarization threshold for Dice/RVE/ASD.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Comma-separated vertebral levels for CSA averaging.
        #[arg(long, value_delimiter = ',', default_values_t = [2, 3])]
        levels: Vec<i32>,
        /// STD flavor for cross-contrast CSA variability.
        #[arg(long, value_enum, default_value_t = StdChoice::Population)]
        std: StdChoice,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Apply the augmentation stack to every (image, seg) pair.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        /// Augmentation config (JSON mirroring the AugmentConfig fields);
        /// defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base seed; sample i draws from seed XOR i.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Pairwise Wilcoxon tests over an existing CSA panel CSV.
    Stats {
        /// Panel CSV produced by `metrics`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// An error with its process exit class.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError {
            code: exit_class(&e),
            message: e.to_string(),
        }
    }
}

fn exit_class(e: &CoreError) -> i32 {
    match e {
        CoreError::InvalidArgument(_) | CoreError::Validation(_) => 1,
        CoreError::Io { .. } | CoreError::Format(_) | CoreError::UnsupportedDatatype(_) => 2,
        _ => 3,
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

/// Run a parsed command; returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::FuseGt {
            manifest,
            out,
            ref_contrast,
            contrasts,
            dilation_radius,
            jobs,
        } => cmd_fuse_gt(
            &manifest,
            &out,
            &ref_contrast,
            contrasts.as_deref(),
            dilation_radius,
            jobs,
        ),
        Command::Metrics {
            manifest,
            out,
            threshold,
            levels,
            std,
            jobs,
        } => cmd_metrics(
            &manifest,
            &out,
            threshold,
            &levels.into_iter().collect(),
            std.into(),
            jobs,
        ),
        Command::Augment {
            manifest,
            config,
            seed,
            out,
            jobs,
        } => cmd_augment(&manifest, config.as_deref(), seed, &out, jobs),
        Command::Stats { input, out } => cmd_stats(&input, &out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError {
                    code: 3,
                    message: format!("thread pool: {e}"),
                })?;
            Ok(pool.install(f))
        }
    }
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn load_validated_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    let loaded = load_manifest(path)?;
    for missing in &loaded.missing {
        log::warn!("referenced file missing: {}", missing.display());
    }
    Ok(loaded.manifest)
}

/// Read a file as a binary mask thresholded at 0.5.
fn read_binary_mask(path: &Path) -> Result<BinaryMask, CoreError> {
    let v = read_nifti(path)?;
    Ok(BinaryMask::thresholded(&v, 0.5))
}

// ---------------------------------------------------------------------------
// fuse-gt
// ---------------------------------------------------------------------------

struct FusedParticipant {
    participant: String,
    coverage: Vec<(String, String, f64)>,
}

fn fuse_one_participant(
    participant: &str,
    records: &[&ContrastRecord],
    ref_contrast: &str,
    dilation_radius: usize,
    out: &Path,
) -> Result<FusedParticipant, CoreError> {
    let ref_record = records
        .iter()
        .find(|r| r.contrast == ref_contrast)
        .ok_or_else(|| {
            CoreError::Validation(format!(
                "participant {participant}: reference contrast {ref_contrast:?} not in manifest"
            ))
        })?;

    let ref_seg_native = read_binary_mask(&ref_record.seg)?;
    let ref_orientation = ref_seg_native.orientation().code();
    let ref_grid = ref_seg_native.volume().clone();

    // Bring every native segmentation into the reference orientation so the
    // third axis is the shared axial direction, build its FOV, and register
    // the resampled mask slice-wise against the reference segmentation.
    let mut entries = Vec::new();
    let mut original_orientation = BTreeMap::new();
    for record in records {
        let native = read_binary_mask(&record.seg)?;
        original_orientation.insert(record.contrast.clone(), native.orientation().code());
        let oriented =
            BinaryMask::thresholded(&reorient(native.volume(), &ref_orientation)?, 0.5);
        let fov = make_fov_mask(&oriented, dilation_radius);
        let on_ref = resample_to_grid(oriented.volume(), &ref_grid, Interp::Linear);
        let warp = register_com(
            &on_ref,
            &ref_grid,
            REGISTRATION_ITERATIONS,
            REGISTRATION_STEP,
        )?;
        entries.push(FusionEntry {
            contrast: record.contrast.clone(),
            seg: oriented,
            warp_to_ref: warp,
            fov: Some(fov),
        });
    }

    let input = FusionInput { entries };
    let bundle = generate_soft_gt(&input, ref_contrast, dilation_radius)?;

    let dir = out.join(participant);
    std::fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
    write_nifti(
        bundle.reference_soft.volume(),
        dir.join("softseg_ref.nii.gz"),
        true,
    )?;
    for (contrast, soft) in &bundle.native_soft {
        // Native outputs go back to each contrast's original orientation.
        let orig = &original_orientation[contrast];
        let native = reorient(soft.volume(), orig)?;
        write_nifti(&native, dir.join(format!("softseg_{contrast}.nii.gz")), true)?;
    }
    for entry in &input.entries {
        entry
            .warp_to_ref
            .write_csv(dir.join(format!("warp_{}.csv", entry.contrast)))?;
    }

    let coverage = bundle
        .fov_coverage
        .iter()
        .map(|(c, f)| (participant.to_string(), c.clone(), *f))
        .collect();
    Ok(FusedParticipant {
        participant: participant.to_string(),
        coverage,
    })
}

pub fn cmd_fuse_gt(
    manifest_path: &Path,
    out: &Path,
    ref_contrast: &str,
    contrasts: Option<&[String]>,
    dilation_radius: usize,
    jobs: Option<usize>,
) -> Result<(), CliError> {
    let manifest = load_validated_manifest(manifest_path)?;
    ensure_out_dir(out)?;

    let participants: Vec<(&str, Vec<&ContrastRecord>)> = manifest
        .participants
        .iter()
        .map(|p| {
            let records = p
                .records
                .iter()
                .filter(|r| {
                    contrasts
                        .map(|subset| subset.iter().any(|c| c == &r.contrast))
                        .unwrap_or(true)
                })
                .collect();
            (p.id.as_str(), records)
        })
        .collect();

    let results: Vec<Result<FusedParticipant, (String, CoreError)>> = with_pool(jobs, || {
        participants
            .par_iter()
            .map(|(id, records)| {
                fuse_one_participant(id, records, ref_contrast, dilation_radius, out)
                    .map_err(|e| (id.to_string(), e))
            })
            .collect()
    })?;

    let mut fused: Vec<FusedParticipant> = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(f) => fused.push(f),
            Err(f) => failures.push(f),
        }
    }
    fused.sort_by(|a, b| a.participant.cmp(&b.participant));

    let mut coverage_rows = Vec::new();
    for f in &fused {
        coverage_rows.extend(f.coverage.iter().cloned());
    }
    let cov_path = out.join("coverage.csv");
    let file = std::fs::File::create(&cov_path).map_err(|e| io_err(&cov_path, e))?;
    write_coverage_csv(&coverage_rows, BufWriter::new(file)).map_err(|e| io_err(&cov_path, e))?;

    if !failures.is_empty() {
        for (participant, e) in &failures {
            eprintln!("participant {participant}: {e}");
        }
        let code = failures.iter().map(|(_, e)| exit_class(e)).max().unwrap();
        return Err(CliError {
            code,
            message: format!("{} participant(s) failed", failures.len()),
        });
    }
    log::info!("fused {} participant(s)", fused.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

fn metrics_for_record(
    participant: &str,
    record: &ContrastRecord,
    threshold: f64,
    levels: &BTreeSet<i32>,
) -> MetricsRow {
    let mut row = MetricsRow {
        participant: participant.to_string(),
        contrast: record.contrast.clone(),
        ..Default::default()
    };
    let mut notes: Vec<String> = Vec::new();

    let loaded = (|| -> Result<(SoftMask, SoftMask), CoreError> {
        let pred = SoftMask::clamped(read_nifti(&record.image)?);
        let gt = SoftMask::clamped(read_nifti(&record.seg)?);
        Ok((pred, gt))
    })();
    let (pred, gt) = match loaded {
        Ok(pair) => pair,
        Err(e) => {
            row.note = e.to_string();
            return row;
        }
    };

    match dice(&pred, &gt, threshold) {
        Ok(v) => row.dice = Some(v),
        Err(e) => notes.push(format!("dice: {e}")),
    }
    match relative_volume_error(&pred, &gt, threshold) {
        Ok(v) => row.rve_pct = Some(v),
        Err(e) => notes.push(format!("rve: {e}")),
    }
    match average_surface_distance(&pred, &gt, threshold) {
        Ok(v) => row.asd_mm = Some(v),
        Err(e) => notes.push(format!("asd: {e}")),
    }

    match &record.levels {
        Some(levels_path) => {
            let outcome = (|| -> Result<(f64, f64), CoreError> {
                let level_map = read_nifti(levels_path)?;
                let pred_csa = csa(&pred, &level_map, levels)?.level_mean_mm2;
                let gt_csa = csa(&gt, &level_map, levels)?.level_mean_mm2;
                Ok((pred_csa, gt_csa))
            })();
            match outcome {
                Ok((p, g)) => {
                    row.pred_csa_mm2 = Some(p);
                    row.gt_csa_mm2 = Some(g);
                    row.abs_csa_error_mm2 = Some(abs_csa_error(g, p));
                }
                Err(e) => notes.push(format!("csa: {e}")),
            }
        }
        None => notes.push("csa: no level map in manifest".into()),
    }

    row.note = notes.join("; ");
    row
}

/// Pairwise Wilcoxon tests between contrasts over per-participant CSA, with
/// Bonferroni correction across the performed tests.
pub fn pairwise_wilcoxon(panels: &[ContrastPanel]) -> Vec<WilcoxonRow> {
    let contrasts: BTreeSet<String> = panels
        .iter()
        .flat_map(|p| p.csa_mm2.keys().cloned())
        .collect();
    let contrasts: Vec<String> = contrasts.into_iter().collect();
    let mut rows = Vec::new();
    for (i, a) in contrasts.iter().enumerate() {
        for b in contrasts.iter().skip(i + 1) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for p in panels {
                if let (Some(&x), Some(&y)) = (p.csa_mm2.get(a), p.csa_mm2.get(b)) {
                    xs.push(x);
                    ys.push(y);
                }
            }
            let (result, note) = match wilcoxon_signed_rank(&xs, &ys) {
                Ok(r) => (Some(r), String::new()),
                Err(e) => (None, e.to_string()),
            };
            rows.push(WilcoxonRow {
                contrast_a: a.clone(),
                contrast_b: b.clone(),
                n: xs.len(),
                result,
                p_bonferroni: None,
                note,
            });
        }
    }
    let ps: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.result.map(|x| x.p_value))
        .collect();
    let corrected = bonferroni(&ps);
    let mut it = corrected.into_iter();
    for row in rows.iter_mut() {
        if row.result.is_some() {
            row.p_bonferroni = it.next();
        }
    }
    rows
}

pub fn cmd_metrics(
    manifest_path: &Path,
    out: &Path,
    threshold: f64,
    levels: &BTreeSet<i32>,
    flavor: StdFlavor,
    jobs: Option<usize>,
) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError {
            code: 1,
            message: format!("threshold {threshold} outside [0, 1]"),
        });
    }
    if levels.is_empty() {
        return Err(CliError {
            code: 1,
            message: "at least one vertebral level is required".into(),
        });
    }
    let manifest = load_validated_manifest(manifest_path)?;
    ensure_out_dir(out)?;

    let records: Vec<(&str, &ContrastRecord)> = manifest.records().collect();
    let mut rows: Vec<MetricsRow> = with_pool(jobs, || {
        records
            .par_iter()
            .map(|(participant, record)| {
                metrics_for_record(participant, record, threshold, levels)
            })
            .collect()
    })?;
    rows.sort_by(|a, b| {
        (a.participant.as_str(), a.contrast.as_str())
            .cmp(&(b.participant.as_str(), b.contrast.as_str()))
    });

    // Panels hold the predicted CSA per contrast.
    let mut by_participant: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for row in &rows {
        if let Some(v) = row.pred_csa_mm2 {
            by_participant
                .entry(row.participant.clone())
                .or_default()
                .insert(row.contrast.clone(), v);
        }
    }
    let panels: Vec<ContrastPanel> = by_participant
        .into_iter()
        .map(|(participant, csa_mm2)| ContrastPanel {
            participant,
            csa_mm2,
        })
        .collect();
    let stds: Vec<Option<f64>> = panels
        .iter()
        .map(|p| std_csa_with(p, flavor).ok())
        .collect();
    let contrasts: Vec<String> = manifest.contrasts().into_iter().collect();

    let metrics_path = out.join("metrics.csv");
    let file = std::fs::File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?;
    write_metrics_csv(&rows, BufWriter::new(file)).map_err(|e| io_err(&metrics_path, e))?;

    let panel_path = out.join("panels.csv");
    let file = std::fs::File::create(&panel_path).map_err(|e| io_err(&panel_path, e))?;
    write_panel_csv(&panels, &contrasts, &stds, BufWriter::new(file))
        .map_err(|e| io_err(&panel_path, e))?;

    let wilcoxon_path = out.join("wilcoxon.csv");
    let file = std::fs::File::create(&wilcoxon_path).map_err(|e| io_err(&wilcoxon_path, e))?;
    write_wilcoxon_csv(&pairwise_wilcoxon(&panels), BufWriter::new(file))
        .map_err(|e| io_err(&wilcoxon_path, e))?;

    log::info!(
        "metrics for {} image(s) over {} participant(s)",
        rows.len(),
        panels.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

fn augment_one(
    participant: &str,
    record: &ContrastRecord,
    cfg: &AugmentConfig,
    out: &Path,
) -> Result<(), CoreError> {
    let image = read_nifti(&record.image)?;
    let label = SoftMask::clamped(read_nifti(&record.seg)?);
    let pair = SamplePair::new(image, label)?;
    let augmented = augment_pair(&pair, cfg);

    let gz = record
        .image
        .extension()
        .map(|e| e == "gz")
        .unwrap_or(false);
    let suffix = if gz { "nii.gz" } else { "nii" };
    let dir = out.join(participant);
    std::fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
    write_nifti(
        &augmented.image,
        dir.join(format!("{}_image.{suffix}", record.contrast)),
        gz,
    )?;
    write_nifti(
        augmented.label.volume(),
        dir.join(format!("{}_label.{suffix}", record.contrast)),
        gz,
    )?;
    Ok(())
}

pub fn cmd_augment(
    manifest_path: &Path,
    config_path: Option<&Path>,
    seed: u64,
    out: &Path,
    jobs: Option<usize>,
) -> Result<(), CliError> {
    let cfg = match config_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            AugmentConfig::from_json(&text)?
        }
        None => {
            log::info!("no augment config given; using the built-in defaults");
            AugmentConfig::default()
        }
    };
    let manifest = load_validated_manifest(manifest_path)?;
    ensure_out_dir(out)?;

    // Deterministic sample enumeration: manifest rows sorted by
    // (participant, contrast); sample i draws from seed XOR i regardless of
    // the worker count.
    let mut records: Vec<(&str, &ContrastRecord)> = manifest.records().collect();
    records.sort_by(|a, b| (a.0, a.1.contrast.as_str()).cmp(&(b.0, b.1.contrast.as_str())));

    let results: Vec<Result<(), (String, CoreError)>> = with_pool(jobs, || {
        records
            .par_iter()
            .enumerate()
            .map(|(index, (participant, record))| {
                let mut sample_cfg = cfg;
                sample_cfg.seed = seed ^ index as u64;
                augment_one(participant, record, &sample_cfg, out)
                    .map_err(|e| (format!("{participant}/{}", record.contrast), e))
            })
            .collect()
    })?;

    let failures: Vec<&(String, CoreError)> =
        results.iter().filter_map(|r| r.as_ref().err()).collect();
    if !failures.is_empty() {
        for (what, e) in &failures {
            eprintln!("{what}: {e}");
        }
        let code = failures.iter().map(|(_, e)| exit_class(e)).max().unwrap();
        return Err(CliError {
            code,
            message: format!("{} sample(s) failed", failures.len()),
        });
    }
    log::info!("augmented {} sample(s)", records.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

pub fn cmd_stats(input: &Path, out: &Path) -> Result<(), CliError> {
    let file = std::fs::File::open(input).map_err(|e| io_err(input, e))?;
    let panels = read_panel_csv(std::io::BufReader::new(file))?;
    ensure_out_dir(out)?;
    let rows = pairwise_wilcoxon(&panels);
    let path = out.join("wilcoxon.csv");
    let file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    write_wilcoxon_csv(&rows, BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
    log::info!("wrote pairwise tests for {} panel row(s)", panels.len());
    Ok(())
}
