#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rgdkit::config::KeyValues;
use rgdkit::dataset::WaymoOptions;
use rgdkit::pipeline::{
    degrade_dataset, eval_dataset, fuse_dataset, preprocess_frames, render_dataset, stats_dataset,
    DegradeOptions, EvalOptions, FuseOptions, PreprocessOptions, RenderOptions,
};
use rgdkit::{
    ApInterpolation, CameraIntrinsics, ErrorClass, FillMode, PatternPresets, SceneConfig,
};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_COMPUTATION: u8 = 4;

/// Settings that never reach a manifest, so output does not depend on where it was
/// written or how many threads wrote it.
const NOT_ECHOED: &[&str] = &[
    "out",
    "input",
    "frames",
    "radiance",
    "depth",
    "detections",
    "labels",
    "patterns",
    "parallelism",
    "verify",
];

/// Synthetic camera/LiDAR dataset pipeline: render scenes, degrade depth to LiDAR
/// sampling, fuse RGD images, evaluate detections and report sampling density.
///
/// Every option may also come from a `key = value` file given with `--config`
/// (keys use underscores, e.g. `downsample_keep = 0.8`). Flags win over the file,
/// and the file wins over built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "rgdkit", version)]
struct Cli {
    /// Run seed; per-image seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Read every written file back and compare it with what was written.
    #[arg(long, global = true)]
    verify: bool,
    /// TOML file of LiDAR sampling presets (default: the bundled presets).
    #[arg(long, global = true)]
    patterns: Option<PathBuf>,
    /// Extra `key=value` setting, e.g. `--set depth_max=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render synthetic scenes: radiance PNG, dense depth, labels and a manifest.
    Render(RenderArgs),
    /// Convert pre-extracted real-world frames (PNG, CSV point cloud, NDJSON labels) into a
    /// dataset: crop away the rows above the LiDAR field of view and rasterize depth.
    Preprocess(PreprocessArgs),
    /// Resample dense depth to a LiDAR pattern and apply dropout, downsampling, clipping, noise.
    Degrade(DegradeArgs),
    /// Combine radiance red/green with quantized depth into RGD images.
    Fuse(FuseArgs),
    /// Score detections against labels (AP at an IoU threshold).
    Eval(EvalArgs),
    /// Per-image and aggregate depth sampling density as CSV.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Horizontal field of view in degrees.
    #[arg(long)]
    hfov: Option<f64>,
    /// Vertical field of view in degrees.
    #[arg(long)]
    vfov: Option<f64>,
}

#[derive(Debug, Args)]
struct DegradeArgs {
    /// Input dataset directory or manifest.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling preset name; omit to keep the input density.
    #[arg(long)]
    preset: Option<String>,
    /// Fraction of samples removed at random.
    #[arg(long)]
    dropout: Option<f64>,
    /// Fraction of samples kept by uniform line decimation.
    #[arg(long)]
    downsample_keep: Option<f64>,
    /// Maximum sensor range in meters.
    #[arg(long)]
    clip_range: Option<f32>,
    /// Standard deviation of Gaussian range noise in meters.
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Dataset providing radiance images and labels.
    #[arg(long)]
    radiance: Option<PathBuf>,
    /// Dataset providing depth maps.
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// How pixels without depth are filled: zero or linear.
    #[arg(long)]
    fill: Option<FillMode>,
    /// Depth mapped to 255 (default: the depth dataset's range).
    #[arg(long)]
    max_range: Option<f32>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Detections as NDJSON.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Labels as NDJSON, or a dataset directory/manifest.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory for summary.json, pr_curve.csv and pr_curve.svg.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop labels farther than this many meters.
    #[arg(long)]
    max_range: Option<f64>,
    #[arg(long)]
    iou: Option<f64>,
    /// AP interpolation: all, 11 or 101.
    #[arg(long)]
    ap_interp: Option<ApInterpolation>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Directory of `<id>.png`, `<id>.csv`, optional `<id>.jsonl` and `camera.json`.
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rows kept.
    #[arg(long)]
    crop_rows: Option<u32>,
    /// First kept row (default: keep the bottom rows).
    #[arg(long)]
    crop_offset: Option<u32>,
    /// LiDAR range in meters.
    #[arg(long)]
    max_range: Option<f32>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// CSV output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Merged settings plus a record of every value a command actually used.
struct Settings {
    kv: KeyValues,
    effective: BTreeMap<String, String>,
}

impl Settings {
    fn new(cli: &Cli) -> Result<Self> {
        let mut kv = match &cli.config {
            Some(path) => KeyValues::load(path)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?,
            None => KeyValues::default(),
        };
        for pair in &cli.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            kv.set(k.trim(), v.trim());
        }
        let mut s = Self {
            kv,
            effective: BTreeMap::new(),
        };
        s.flag("seed", cli.seed);
        s.flag("parallelism", cli.parallelism);
        s.flag("patterns", cli.patterns.as_ref().map(|p| p.display()));
        if cli.verify {
            s.kv.set("verify", true);
        }
        Ok(s)
    }

    fn flag(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.kv.set(key, v.to_string());
        }
    }

    fn get<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr + ToString,
        T::Err: fmt::Display,
    {
        let v: Option<T> = self.kv.get_parsed(key).map_err(|e| usage(e.to_string()))?;
        if let Some(v) = v.as_ref().filter(|_| !NOT_ECHOED.contains(&key)) {
            self.effective.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    fn get_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: fmt::Display,
    {
        let v = self.get(key)?.unwrap_or(default);
        if !NOT_ECHOED.contains(&key) {
            self.effective.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    fn path(&mut self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.get::<String>(key)?.map(PathBuf::from))
    }

    fn required_path(&mut self, key: &str) -> Result<PathBuf> {
        self.path(key)?
            .ok_or_else(|| usage(format!("missing --{}", key.replace('_', "-"))))
    }

    fn existing_path(&mut self, key: &str) -> Result<PathBuf> {
        let p = self.required_path(key)?;
        if !p.exists() {
            return Err(usage(format!(
                "--{} {}: no such file or directory",
                key.replace('_', "-"),
                p.display()
            )));
        }
        Ok(p)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<rgdkit::Error>().map(rgdkit::Error::class) {
        Some(ErrorClass::Usage) => EXIT_USAGE,
        Some(ErrorClass::Computation) => EXIT_COMPUTATION,
        _ => EXIT_DATA,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut s = Settings::new(&cli)?;
    let seed = s.get_or("seed", 0u64)?;
    let verify = s.get_or("verify", false)?;
    let threads: Option<usize> = s.get("parallelism")?;
    if threads == Some(0) {
        return Err(usage("--parallelism must be at least 1"));
    }
    // Resolve everything before any work starts.
    let job = match cli.command {
        Command::Render(a) => Job::Render(resolve_render(&mut s, a, seed, verify)?),
        Command::Degrade(a) => Job::Degrade(resolve_degrade(&mut s, a, seed, verify)?),
        Command::Fuse(a) => Job::Fuse(resolve_fuse(&mut s, a, verify)?),
        Command::Eval(a) => Job::Eval(resolve_eval(&mut s, a, verify)?),
        Command::Preprocess(a) => Job::Preprocess(resolve_preprocess(&mut s, a, verify)?),
        Command::Stats(a) => Job::Stats(resolve_stats(&mut s, a)?),
    };
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building worker pool")?;
            pool.install(|| job.run())
        }
        None => job.run(),
    }
}

enum Job {
    Render(RenderOptions),
    Degrade(DegradeOptions),
    Fuse(FuseOptions),
    Eval(EvalOptions),
    Preprocess(PreprocessOptions),
    Stats((PathBuf, Option<PathBuf>)),
}

impl Job {
    fn run(self) -> Result<()> {
        match self {
            Job::Render(o) => {
                let m = render_dataset(&o)?;
                println!(
                    "rendered {} images to {}",
                    m.entries.len(),
                    o.out_dir.display()
                );
            }
            Job::Degrade(o) => {
                let r = degrade_dataset(&o)?;
                let samples: usize = r.counts.iter().map(|(_, c)| c).sum();
                println!(
                    "degraded {} images to {}: {samples} samples, mean sample ratio {:.4}%",
                    r.counts.len(),
                    o.out_dir.display(),
                    r.mean_ratio * 100.0
                );
            }
            Job::Fuse(o) => {
                let m = fuse_dataset(&o)?;
                println!(
                    "fused {} images to {} (fill {}, max range {} m)",
                    m.entries.len(),
                    o.out_dir.display(),
                    o.fill_mode,
                    m.max_range
                );
            }
            Job::Eval(o) => {
                let r = eval_dataset(&o)?;
                println!("{}", summary_line(&r.summary));
            }
            Job::Preprocess(o) => {
                let m = preprocess_frames(&o)?;
                println!(
                    "preprocessed {} frames to {} ({}x{}, cy {})",
                    m.entries.len(),
                    o.out_dir.display(),
                    m.intrinsics.width,
                    m.intrinsics.height,
                    m.intrinsics.cy
                );
            }
            Job::Stats((input, out)) => {
                let r = stats_dataset(&input, out.as_deref())?;
                match out {
                    Some(p) => println!(
                        "wrote density report for {} images to {}",
                        r.rows.len(),
                        p.display()
                    ),
                    None => print!("{}", r.csv),
                }
            }
        }
        Ok(())
    }
}

fn summary_line(s: &rgdkit::report::EvalSummary) -> String {
    let range = s
        .max_range
        .map(|r| format!(", max_range {r} m"))
        .unwrap_or_default();
    format!(
        "AP {:.6} (tp {}, fp {}, fn {}, {} labels, {} detections, IoU {}, {} interpolation{range})",
        s.ap, s.tp, s.fp, s.fn_, s.ground_truth, s.detections, s.iou_threshold, s.interpolation
    )
}

fn resolve_render(
    s: &mut Settings,
    a: RenderArgs,
    seed: u64,
    verify: bool,
) -> Result<RenderOptions> {
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    s.flag("count", a.count);
    s.flag("width", a.width);
    s.flag("height", a.height);
    s.flag("hfov", a.hfov);
    s.flag("vfov", a.vfov);
    let out_dir = s.required_path("out")?;
    let count = s.get_or("count", 10usize)?;
    let d = CameraIntrinsics::automotive_default();
    let width = s.get_or("width", d.width)?;
    let height = s.get_or("height", d.height)?;
    let hfov = s.get_or("hfov", 64.0f64)?;
    let vfov = s.get_or("vfov", 21.0f64)?;
    let intrinsics = CameraIntrinsics::from_fov(width, height, hfov, vfov)?;
    let scene = SceneConfig::from_key_values(&s.kv).map_err(|e| usage(e.to_string()))?;
    for (k, v) in scene.to_key_values().iter() {
        s.effective.insert(k.to_string(), v.to_string());
    }
    Ok(RenderOptions {
        out_dir,
        count,
        seed,
        intrinsics,
        scene,
        effective_config: s.effective.clone(),
        verify,
    })
}

fn load_presets(s: &mut Settings) -> Result<PatternPresets> {
    match s.path("patterns")? {
        Some(p) => {
            PatternPresets::load(&p).map_err(|e| usage(format!("--patterns {}: {e}", p.display())))
        }
        None => Ok(PatternPresets::builtin()),
    }
}

fn resolve_degrade(
    s: &mut Settings,
    a: DegradeArgs,
    seed: u64,
    verify: bool,
) -> Result<DegradeOptions> {
    s.flag("input", a.input.as_ref().map(|p| p.display()));
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    s.flag("preset", a.preset);
    s.flag("dropout", a.dropout);
    s.flag("downsample_keep", a.downsample_keep);
    s.flag("clip_range", a.clip_range);
    s.flag("noise_sigma", a.noise_sigma);
    let input = s.existing_path("input")?;
    let out_dir = s.required_path("out")?;
    let pattern = match s.get::<String>("preset")? {
        Some(name) => {
            let p = *load_presets(s)?.get(&name)?;
            Some((name, p))
        }
        None => None,
    };
    let dropout = s.get("dropout")?;
    let downsample_keep = s.get("downsample_keep")?;
    let clip_range = s.get("clip_range")?;
    let noise_sigma = s.get_or("noise_sigma", 0.0f64)?;
    if let Some(f) = dropout {
        if !(0.0..=1.0).contains(&f) {
            return Err(usage("--dropout must lie in [0, 1]"));
        }
    }
    if let Some(f) = downsample_keep {
        if !(f > 0.0 && f <= 1.0) {
            return Err(usage("--downsample-keep must lie in (0, 1]"));
        }
    }
    if clip_range.is_some_and(|r: f32| !(r > 0.0)) {
        return Err(usage("--clip-range must be positive"));
    }
    if !(noise_sigma >= 0.0) {
        return Err(usage("--noise-sigma must be >= 0"));
    }
    Ok(DegradeOptions {
        input,
        out_dir,
        pattern,
        clip_range,
        dropout,
        downsample_keep,
        noise_sigma,
        seed,
        effective_config: s.effective.clone(),
        verify,
    })
}

fn resolve_fuse(s: &mut Settings, a: FuseArgs, verify: bool) -> Result<FuseOptions> {
    s.flag("radiance", a.radiance.as_ref().map(|p| p.display()));
    s.flag("depth", a.depth.as_ref().map(|p| p.display()));
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    s.flag("fill", a.fill);
    s.flag("max_range", a.max_range);
    let radiance = s.existing_path("radiance")?;
    let depth = s.existing_path("depth")?;
    let out_dir = s.required_path("out")?;
    let fill_mode = s.get_or("fill", FillMode::Linear)?;
    let max_range = s.get("max_range")?;
    if max_range.is_some_and(|r: f32| !(r > 0.0)) {
        return Err(usage("--max-range must be positive"));
    }
    Ok(FuseOptions {
        radiance,
        depth,
        out_dir,
        fill_mode,
        max_range,
        effective_config: s.effective.clone(),
        verify,
    })
}

fn resolve_eval(s: &mut Settings, a: EvalArgs, verify: bool) -> Result<EvalOptions> {
    s.flag("detections", a.detections.as_ref().map(|p| p.display()));
    s.flag("labels", a.labels.as_ref().map(|p| p.display()));
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    s.flag("max_range", a.max_range);
    s.flag("iou", a.iou);
    s.flag("ap_interp", a.ap_interp);
    let detections = s.existing_path("detections")?;
    let labels = s.existing_path("labels")?;
    let out_dir = s.path("out")?;
    let max_range = s.get("max_range")?;
    let iou_threshold = s.get_or("iou", 0.5f64)?;
    let interpolation = s.get_or("ap_interp", ApInterpolation::All)?;
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(usage("--iou must lie in (0, 1]"));
    }
    if max_range.is_some_and(|r: f64| !(r > 0.0)) {
        return Err(usage("--max-range must be positive"));
    }
    Ok(EvalOptions {
        detections,
        labels,
        out_dir,
        max_range,
        iou_threshold,
        interpolation,
        verify,
    })
}

fn resolve_preprocess(
    s: &mut Settings,
    a: PreprocessArgs,
    verify: bool,
) -> Result<PreprocessOptions> {
    s.flag("frames", a.frames.as_ref().map(|p| p.display()));
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    s.flag("crop_rows", a.crop_rows);
    s.flag("crop_offset", a.crop_offset);
    s.flag("max_range", a.max_range);
    let frames_dir = s.existing_path("frames")?;
    let out_dir = s.required_path("out")?;
    let d = WaymoOptions::default();
    let crop_rows = s.get_or("crop_rows", d.crop_rows)?;
    let crop_offset = s.get("crop_offset")?;
    let max_range = s.get_or("max_range", d.max_range)?;
    if crop_rows == 0 {
        return Err(usage("--crop-rows must be at least 1"));
    }
    if !(max_range > 0.0) {
        return Err(usage("--max-range must be positive"));
    }
    Ok(PreprocessOptions {
        frames_dir,
        out_dir,
        crop: WaymoOptions {
            crop_rows,
            crop_offset,
            max_range,
        },
        effective_config: s.effective.clone(),
        verify,
    })
}

fn resolve_stats(s: &mut Settings, a: StatsArgs) -> Result<(PathBuf, Option<PathBuf>)> {
    s.flag("input", a.input.as_ref().map(|p| p.display()));
    s.flag("out", a.out.as_ref().map(|p| p.display()));
    let input = s.existing_path("input")?;
    let out = s.path("out")?;
    if let Some(dir) = out.as_deref().and_then(Path::parent) {
        if !dir.as_os_str().is_empty() && !dir.is_dir() {
            return Err(usage(format!(
                "--out: directory {} does not exist",
                dir.display()
            )));
        }
    }
    Ok((input, out))
}
