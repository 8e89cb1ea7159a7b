//! Dataset-level commands: render, preprocess, degrade, fuse, eval and stats.
//!
//! Every command writes its per-image files first and the manifest last, so an
//! interrupted run never leaves a manifest pointing at missing files. Work is spread
//! over the current rayon pool and results are gathered in input order, so output
//! does not depend on the number of threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::labels::LabelRecord;
use crate::dataset::{
    decode_labels, manifest_path, read_depth_map, read_detections, read_labels, read_point_cloud,
    read_radiance_png, read_rgd_png, waymo_preprocess_with, write_depth_map, write_labels,
    write_radiance_png, write_rgd_png, DatasetManifest, LoadedManifest, ManifestEntry,
    WaymoOptions, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::fusion::{compose_rgd, fill_missing, quantize_depth, FillMode, RgdMetadata};
use crate::geometry::CameraIntrinsics;
use crate::lidar::{
    add_range_noise, clip_range_sparse, density_report, dropout, sample_depth, uniform_downsample,
    DensityReport, SamplingPattern, SparseDepth,
};
use crate::metrics::{
    average_precision_with, filter_by_range, ApInterpolation, Box2D, EvalResult, GroundTruth,
    GroundTruthSet,
};
use crate::report::{density_csv, eval_svg, pr_curve_csv, DensityRow, EvalSummary};
use crate::scene::{
    generate_scene, ground_truth_boxes_visible, raycast_depth, raycast_radiance, SceneConfig,
};

/// Per-item seed derived from a run seed (SplitMix64 finalizer).
pub fn item_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn verify_failed(what: &str, path: &Path) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: format!("{what} did not read back identically"),
    }
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub out_dir: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub scene: SceneConfig,
    pub effective_config: BTreeMap<String, String>,
    pub verify: bool,
}

pub fn render_dataset(opts: &RenderOptions) -> Result<DatasetManifest> {
    opts.scene.validate()?;
    create_dir(&opts.out_dir)?;
    let k = opts.intrinsics;

    let entries = (0..opts.count)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let image_id = format!("scene_{i:05}");
            let scene = generate_scene(&opts.scene, item_seed(opts.seed, i as u64))?;
            let depth = raycast_depth(&scene, &k);
            let radiance = raycast_radiance(&scene, &k, opts.scene.exposure_s)?;
            let labels =
                ground_truth_boxes_visible(&scene, &k, &image_id, opts.scene.min_visible_fraction);

            let radiance_path = format!("{image_id}.png");
            let depth_path = format!("{image_id}.dmap");
            let rp = opts.out_dir.join(&radiance_path);
            let dp = opts.out_dir.join(&depth_path);
            write_radiance_png(&rp, &radiance)?;
            write_depth_map(&dp, &depth)?;
            if opts.verify {
                if read_radiance_png(&rp)? != radiance {
                    return Err(verify_failed("radiance", &rp));
                }
                if read_depth_map(&dp)? != depth {
                    return Err(verify_failed("depth", &dp));
                }
            }
            Ok(ManifestEntry {
                labels: labels
                    .boxes
                    .iter()
                    .map(|g| LabelRecord::from_ground_truth(g, false))
                    .collect(),
                image_id,
                radiance_path: Some(radiance_path),
                depth_path: Some(depth_path),
                rgd_path: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = DatasetManifest::new(k, opts.scene.background_depth as f32);
    manifest.effective_config = opts.effective_config.clone();
    manifest.entries = entries;
    let labels_path = opts.out_dir.join("labels.jsonl");
    let gts = manifest.ground_truth()?;
    write_labels(&labels_path, &gts)?;
    if opts.verify && read_labels(&labels_path)? != gts {
        return Err(verify_failed("labels", &labels_path));
    }
    finish_manifest(&manifest, &opts.out_dir, opts.verify)?;
    Ok(manifest)
}

fn finish_manifest(manifest: &DatasetManifest, out_dir: &Path, verify: bool) -> Result<()> {
    let path = out_dir.join(MANIFEST_FILE);
    manifest.write(&path)?;
    if verify {
        let back = DatasetManifest::load(&path)?;
        if &back.manifest != manifest {
            return Err(verify_failed("manifest", &path));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DegradeOptions {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    /// Preset name recorded in the manifest, with its resolved pattern. `None` keeps
    /// the input density.
    pub pattern: Option<(String, SamplingPattern)>,
    pub clip_range: Option<f32>,
    pub dropout: Option<f64>,
    pub downsample_keep: Option<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub effective_config: BTreeMap<String, String>,
    pub verify: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradeSummary {
    pub manifest: DatasetManifest,
    pub counts: Vec<(String, usize)>,
    pub mean_ratio: f64,
}

pub fn degrade_dataset(opts: &DegradeOptions) -> Result<DegradeSummary> {
    let input = DatasetManifest::load(&manifest_path(&opts.input))?;
    let k = input.manifest.intrinsics;
    create_dir(&opts.out_dir)?;

    let results = input
        .manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| -> Result<(ManifestEntry, usize)> {
            let depth_rel = entry.depth_path.as_ref().ok_or_else(|| Error::Manifest {
                entry: i,
                message: "entry has no depth_path".into(),
            })?;
            let dense = read_depth_map(&input.resolve(depth_rel))?;
            let mut s = match &opts.pattern {
                Some((_, p)) => sample_depth(&dense, p, &k)?,
                None => SparseDepth::from_map(dense),
            };
            if let Some(r) = opts.clip_range {
                s = clip_range_sparse(&s, r)?;
            }
            if let Some(f) = opts.dropout {
                s = dropout(&s, f, item_seed(opts.seed, i as u64))?;
            }
            if let Some(keep) = opts.downsample_keep {
                s = uniform_downsample(&s, keep)?;
            }
            if opts.noise_sigma > 0.0 {
                s = add_range_noise(
                    &s,
                    opts.noise_sigma,
                    item_seed(opts.seed ^ 0x006E_6F69_7365, i as u64),
                )?;
            }

            let depth_path = format!("{}.dmap", entry.image_id);
            let dp = opts.out_dir.join(&depth_path);
            write_depth_map(&dp, s.map())?;
            if opts.verify && &read_depth_map(&dp)? != s.map() {
                return Err(verify_failed("depth", &dp));
            }
            let radiance_path = match &entry.radiance_path {
                Some(rel) => {
                    let src = input.resolve(rel);
                    let dst = opts.out_dir.join(rel);
                    fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
                    Some(rel.clone())
                }
                None => None,
            };
            let out = ManifestEntry {
                image_id: entry.image_id.clone(),
                radiance_path,
                depth_path: Some(depth_path),
                rgd_path: None,
                labels: entry.labels.clone(),
            };
            Ok((out, s.sample_count()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = DatasetManifest::new(k, opts.clip_range.unwrap_or(input.manifest.max_range));
    manifest.pattern_preset = opts.pattern.as_ref().map(|(name, _)| name.clone());
    manifest.pattern = opts.pattern.as_ref().map(|(_, p)| *p);
    manifest.effective_config = opts.effective_config.clone();
    let mut counts = Vec::with_capacity(results.len());
    for (entry, count) in results {
        counts.push((entry.image_id.clone(), count));
        manifest.entries.push(entry);
    }
    finish_manifest(&manifest, &opts.out_dir, opts.verify)?;

    let mean_ratio = if counts.is_empty() {
        0.0
    } else {
        counts.iter().map(|(_, c)| *c as f64).sum::<f64>() / (counts.len() * k.pixel_count()) as f64
    };
    Ok(DegradeSummary {
        manifest,
        counts,
        mean_ratio,
    })
}

#[derive(Debug, Clone)]
pub struct FuseOptions {
    pub radiance: PathBuf,
    pub depth: PathBuf,
    pub out_dir: PathBuf,
    pub fill_mode: FillMode,
    /// Quantization range; defaults to the depth manifest's `max_range`.
    pub max_range: Option<f32>,
    pub effective_config: BTreeMap<String, String>,
    pub verify: bool,
}

/// Checks that both manifests list the same image ids.
pub fn check_alignment(a: &DatasetManifest, b: &DatasetManifest) -> Result<()> {
    let left: BTreeSet<&str> = a.entries.iter().map(|e| e.image_id.as_str()).collect();
    let right: BTreeSet<&str> = b.entries.iter().map(|e| e.image_id.as_str()).collect();
    if left != right {
        return Err(Error::Misaligned {
            only_left: left.difference(&right).map(|s| s.to_string()).collect(),
            only_right: right.difference(&left).map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

pub fn fuse_dataset(opts: &FuseOptions) -> Result<DatasetManifest> {
    let radiance = DatasetManifest::load(&manifest_path(&opts.radiance))?;
    let depth = DatasetManifest::load(&manifest_path(&opts.depth))?;
    check_alignment(&radiance.manifest, &depth.manifest)?;
    let max_range = opts.max_range.unwrap_or(depth.manifest.max_range);
    let by_id: BTreeMap<&str, (usize, &ManifestEntry)> = depth
        .manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.image_id.as_str(), (i, e)))
        .collect();
    create_dir(&opts.out_dir)?;

    let entries = radiance
        .manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| -> Result<ManifestEntry> {
            let (di, dentry) = by_id[entry.image_id.as_str()];
            let rad_rel = entry
                .radiance_path
                .as_ref()
                .ok_or_else(|| Error::Manifest {
                    entry: i,
                    message: "entry has no radiance_path".into(),
                })?;
            let depth_rel = dentry.depth_path.as_ref().ok_or_else(|| Error::Manifest {
                entry: di,
                message: "entry has no depth_path".into(),
            })?;
            let img = read_radiance_png(&radiance.resolve(rad_rel))?;
            let d = read_depth_map(&depth.resolve(depth_rel))?;
            let plane = fill_missing(&quantize_depth(&d, max_range)?, opts.fill_mode);
            let rgd = compose_rgd(&img, &plane, opts.fill_mode, max_range)?;
            if rgd.red != img.red || rgd.green != img.green {
                return Err(verify_failed(
                    "red/green planes",
                    &radiance.resolve(rad_rel),
                ));
            }
            let rgd_path = format!("{}.rgd.png", entry.image_id);
            let rp = opts.out_dir.join(&rgd_path);
            write_rgd_png(&rp, &rgd)?;
            if opts.verify {
                let meta = RgdMetadata {
                    max_range,
                    fill_mode: opts.fill_mode,
                };
                if read_rgd_png(&rp, meta)? != rgd {
                    return Err(verify_failed("rgd", &rp));
                }
            }
            Ok(ManifestEntry {
                image_id: entry.image_id.clone(),
                radiance_path: None,
                depth_path: None,
                rgd_path: Some(rgd_path),
                labels: entry.labels.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = DatasetManifest::new(radiance.manifest.intrinsics, max_range);
    manifest.pattern_preset = depth.manifest.pattern_preset.clone();
    manifest.pattern = depth.manifest.pattern;
    manifest.fill_mode = Some(opts.fill_mode);
    manifest.effective_config = opts.effective_config.clone();
    manifest.entries = entries;
    finish_manifest(&manifest, &opts.out_dir, opts.verify)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub detections: PathBuf,
    /// NDJSON labels file, a manifest file, or a dataset directory.
    pub labels: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub max_range: Option<f64>,
    pub iou_threshold: f64,
    pub interpolation: ApInterpolation,
    pub verify: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub result: EvalResult,
    pub summary: EvalSummary,
}

/// Loads ground truth from an NDJSON file or from a manifest.
pub fn load_ground_truth(path: &Path) -> Result<GroundTruthSet> {
    if path.is_dir() || path.extension().is_some_and(|e| e == "json") {
        DatasetManifest::load(&manifest_path(path))?
            .manifest
            .ground_truth()
    } else {
        read_labels(path)
    }
}

pub fn eval_dataset(opts: &EvalOptions) -> Result<EvalOutcome> {
    let dets = read_detections(&opts.detections)?;
    let mut gts = load_ground_truth(&opts.labels)?;
    if let Some(r) = opts.max_range {
        gts = filter_by_range(&gts, r)?;
    }
    let result = average_precision_with(&dets, &gts, opts.iou_threshold, opts.interpolation)?;
    let summary = EvalSummary::new(&result, gts.len(), dets.detections.len(), opts.max_range);

    if let Some(dir) = &opts.out_dir {
        create_dir(dir)?;
        let csv = dir.join("pr_curve.csv");
        let svg = dir.join("pr_curve.svg");
        let json = dir.join("summary.json");
        let title = format!(
            "AP@{}IoU ({} interpolation)",
            opts.iou_threshold, opts.interpolation
        );
        write_text(&csv, &pr_curve_csv(&result))?;
        write_text(&svg, &eval_svg(&result, &title))?;
        let body = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        write_text(&json, &body)?;
        if opts.verify {
            let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
            let back: EvalSummary = serde_json::from_str(&text).map_err(|e| Error::Image {
                path: json.clone(),
                message: e.to_string(),
            })?;
            if back != summary {
                return Err(verify_failed("summary", &json));
            }
        }
    }
    Ok(EvalOutcome { result, summary })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsOutcome {
    pub rows: Vec<DensityRow>,
    pub aggregate: Option<DensityReport>,
    pub csv: String,
}

pub fn stats_dataset(input: &Path, out: Option<&Path>) -> Result<StatsOutcome> {
    let loaded: LoadedManifest = DatasetManifest::load(&manifest_path(input))?;
    let k = loaded.manifest.intrinsics;
    let rows = loaded
        .manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| -> Result<DensityRow> {
            let rel = e.depth_path.as_ref().ok_or_else(|| Error::Manifest {
                entry: i,
                message: "entry has no depth_path".into(),
            })?;
            let d = read_depth_map(&loaded.resolve(rel))?;
            Ok(DensityRow {
                image_id: e.image_id.clone(),
                report: density_report(&SparseDepth::from_map(d), &k),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let aggregate = (!rows.is_empty()).then(|| {
        let total: usize = rows.iter().map(|r| r.report.sample_count).sum();
        let median = |f: fn(&DensityReport) -> Option<f64>| {
            let mut v: Vec<f64> = rows.iter().filter_map(|r| f(&r.report)).collect();
            v.sort_by(f64::total_cmp);
            (!v.is_empty()).then(|| v[v.len() / 2])
        };
        DensityReport {
            sample_count: total,
            ratio: total as f64 / (rows.len() * k.pixel_count()) as f64,
            h_deg_per_sample: median(|r| r.h_deg_per_sample),
            v_deg_per_sample: median(|r| r.v_deg_per_sample),
        }
    });
    let csv = density_csv(&rows, aggregate.as_ref());
    if let Some(path) = out {
        write_text(path, &csv)?;
    }
    Ok(StatsOutcome {
        rows,
        aggregate,
        csv,
    })
}

/// Intrinsics file expected next to pre-extracted real-world frames.
pub const CAMERA_FILE: &str = "camera.json";

#[derive(Debug, Clone)]
pub struct PreprocessOptions {
    /// Directory of `<id>.png` + `<id>.csv` pairs (optional `<id>.jsonl` labels) and
    /// a `camera.json` holding the full-frame intrinsics.
    pub frames_dir: PathBuf,
    pub out_dir: PathBuf,
    pub crop: WaymoOptions,
    pub effective_config: BTreeMap<String, String>,
    pub verify: bool,
}

/// Frame ids with both an image and a point cloud, sorted.
pub fn list_frames(dir: &Path) -> Result<Vec<String>> {
    let mut pngs = BTreeSet::new();
    let mut clouds = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let (Some(stem), Some(ext)) = (path.file_stem(), path.extension()) else {
            continue;
        };
        let stem = stem.to_string_lossy().into_owned();
        match ext.to_str() {
            Some("png") => pngs.insert(stem),
            Some("csv") => clouds.insert(stem),
            _ => false,
        };
    }
    if pngs != clouds {
        return Err(Error::Misaligned {
            only_left: pngs.difference(&clouds).cloned().collect(),
            only_right: clouds.difference(&pngs).cloned().collect(),
        });
    }
    Ok(pngs.into_iter().collect())
}

/// Moves a full-frame label into a crop of `rows` rows starting at `offset`; boxes
/// left with no area are dropped.
pub fn crop_label(g: &GroundTruth, offset: u32, rows: u32) -> Option<GroundTruth> {
    let top = f64::from(offset);
    let y_min = (g.bbox.y_min - top).max(0.0);
    let y_max = (g.bbox.y_max - top).min(f64::from(rows));
    let bbox = Box2D::new(
        g.bbox.x_min,
        y_min,
        g.bbox.x_max,
        y_max,
        g.bbox.class.clone(),
    )
    .ok()?;
    Some(GroundTruth {
        image_id: g.image_id.clone(),
        bbox,
        distance_m: g.distance_m,
    })
}

pub fn preprocess_frames(opts: &PreprocessOptions) -> Result<DatasetManifest> {
    let camera_path = opts.frames_dir.join(CAMERA_FILE);
    let text = fs::read_to_string(&camera_path).map_err(|e| Error::io(&camera_path, e))?;
    let k: CameraIntrinsics = serde_json::from_str(&text).map_err(|e| Error::Image {
        path: camera_path.clone(),
        message: format!("bad intrinsics: {e}"),
    })?;
    let k = CameraIntrinsics::new(k.width, k.height, k.fx, k.fy, k.cx, k.cy)?;
    let ids = list_frames(&opts.frames_dir)?;
    create_dir(&opts.out_dir)?;

    let frames = ids
        .par_iter()
        .map(|id| -> Result<(ManifestEntry, CameraIntrinsics)> {
            let img = read_radiance_png(&opts.frames_dir.join(format!("{id}.png")))?;
            let cloud = read_point_cloud(&opts.frames_dir.join(format!("{id}.csv")))?;
            let frame = waymo_preprocess_with(&img, &cloud, &k, &opts.crop)?;
            let offset = opts
                .crop
                .crop_offset
                .unwrap_or(img.height() - opts.crop.crop_rows);

            let labels_path = opts.frames_dir.join(format!("{id}.jsonl"));
            let labels = if labels_path.is_file() {
                let text =
                    fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
                decode_labels(&text)?
                    .boxes
                    .into_iter()
                    .filter_map(|mut g| {
                        g.image_id.clone_from(id);
                        crop_label(&g, offset, opts.crop.crop_rows)
                    })
                    .map(|g| LabelRecord::from_ground_truth(&g, false))
                    .collect()
            } else {
                Vec::new()
            };

            let radiance_path = format!("{id}.png");
            let depth_path = format!("{id}.dmap");
            let rp = opts.out_dir.join(&radiance_path);
            let dp = opts.out_dir.join(&depth_path);
            write_radiance_png(&rp, &frame.radiance)?;
            write_depth_map(&dp, &frame.depth)?;
            if opts.verify {
                if read_radiance_png(&rp)? != frame.radiance {
                    return Err(verify_failed("radiance", &rp));
                }
                if read_depth_map(&dp)? != frame.depth {
                    return Err(verify_failed("depth", &dp));
                }
            }
            let entry = ManifestEntry {
                image_id: id.clone(),
                radiance_path: Some(radiance_path),
                depth_path: Some(depth_path),
                rgd_path: None,
                labels,
            };
            Ok((entry, frame.intrinsics))
        })
        .collect::<Result<Vec<_>>>()?;

    let cropped = match frames.first() {
        Some((_, k)) => *k,
        None => {
            let offset = opts
                .crop
                .crop_offset
                .unwrap_or(k.height.saturating_sub(opts.crop.crop_rows));
            CameraIntrinsics::new(
                k.width,
                opts.crop.crop_rows,
                k.fx,
                k.fy,
                k.cx,
                k.cy - f64::from(offset),
            )?
        }
    };
    let mut manifest = DatasetManifest::new(cropped, opts.crop.max_range);
    manifest.effective_config = opts.effective_config.clone();
    manifest.entries = frames.into_iter().map(|(e, _)| e).collect();
    let labels_path = opts.out_dir.join("labels.jsonl");
    let gts = manifest.ground_truth()?;
    write_labels(&labels_path, &gts)?;
    finish_manifest(&manifest, &opts.out_dir, opts.verify)?;
    Ok(manifest)
}
