use std::fs;
use std::path::Path;

use rgdkit::dataset::{read_depth_map, read_rgd_png, write_detections};
use rgdkit::fusion::{fill_missing, quantize_depth};
use rgdkit::pipeline::{
    degrade_dataset, eval_dataset, fuse_dataset, render_dataset, stats_dataset, DegradeOptions,
    EvalOptions, FuseOptions, RenderOptions,
};
use rgdkit::{
    ApInterpolation, CameraIntrinsics, DetectionSet, Error, FillMode, MaskedPlane, PatternPresets,
    RgdMetadata, SceneConfig,
};

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
        .install(f)
}

fn render(dir: &Path, count: usize, seed: u64) {
    render_dataset(&RenderOptions {
        out_dir: dir.to_path_buf(),
        count,
        seed,
        intrinsics: CameraIntrinsics::from_fov(200, 68, 64.0, 21.0).unwrap(),
        scene: SceneConfig::default(),
        effective_config: Default::default(),
        verify: false,
    })
    .unwrap();
}

fn degrade(input: &Path, out: &Path, preset: &str, dropout: Option<f64>) {
    let presets = PatternPresets::builtin();
    degrade_dataset(&DegradeOptions {
        input: input.to_path_buf(),
        out_dir: out.to_path_buf(),
        pattern: Some((preset.into(), *presets.get(preset).unwrap())),
        clip_range: Some(76.0),
        dropout,
        downsample_keep: None,
        noise_sigma: 0.05,
        seed: 9,
        effective_config: Default::default(),
        verify: true,
    })
    .unwrap();
}

fn fuse(radiance: &Path, depth: &Path, out: &Path, fill_mode: FillMode) {
    fuse_dataset(&FuseOptions {
        radiance: radiance.to_path_buf(),
        depth: depth.to_path_buf(),
        out_dir: out.to_path_buf(),
        fill_mode,
        max_range: None,
        effective_config: Default::default(),
        verify: true,
    })
    .unwrap();
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let t = tempfile::tempdir().unwrap();
    let run = |tag: &str, threads: usize| {
        let (r, d) = (
            t.path().join(format!("r{tag}")),
            t.path().join(format!("d{tag}")),
        );
        with_threads(threads, || {
            render(&r, 12, 5);
            degrade(&r, &d, "hi02x033", Some(0.2));
        });
        (files(&r), files(&d))
    };
    assert_eq!(run("1", 1), run("4", 4));
}

#[test]
fn fill_modes_agree_on_measured_pixels() {
    let t = tempfile::tempdir().unwrap();
    let (r, d) = (t.path().join("r"), t.path().join("d"));
    render(&r, 3, 1);
    degrade(&r, &d, "lo04x065", None);
    let (z, l) = (t.path().join("zero"), t.path().join("linear"));
    fuse(&r, &d, &z, FillMode::Zero);
    fuse(&r, &d, &l, FillMode::Linear);
    for i in 0..3 {
        let id = format!("scene_{i:05}");
        let depth = read_depth_map(&d.join(format!("{id}.dmap"))).unwrap();
        let read = |dir: &Path, fill_mode| {
            let meta = RgdMetadata {
                max_range: 76.0,
                fill_mode,
            };
            read_rgd_png(&dir.join(format!("{id}.rgd.png")), meta).unwrap()
        };
        let (a, b) = (read(&z, FillMode::Zero), read(&l, FillMode::Linear));
        assert!(depth.valid_count() > 0);
        for j in (0..depth.values().len()).filter(|&j| depth.is_valid_at(j)) {
            assert_eq!(a.depth.data()[j], b.depth.data()[j]);
        }
        assert_eq!((a.red, a.green), (b.red, b.green));
    }
}

#[test]
fn dense_depth_makes_fill_a_no_op() {
    let t = tempfile::tempdir().unwrap();
    let r = t.path().join("r");
    render(&r, 2, 3);
    let dense = read_depth_map(&r.join("scene_00001.dmap")).unwrap();
    let masked = quantize_depth(&dense, 120.0).unwrap();
    let zero = fill_missing(&masked, FillMode::Zero);
    assert_eq!(zero, fill_missing(&masked, FillMode::Linear));
    assert_eq!(
        zero,
        fill_missing(&MaskedPlane::dense(zero.clone()), FillMode::Linear)
    );

    let stats = stats_dataset(&r, None).unwrap();
    assert_eq!(stats.aggregate.unwrap().ratio, 1.0);
}

#[test]
fn eval_range_filter_and_empty_ground_truth() {
    let t = tempfile::tempdir().unwrap();
    let r = t.path().join("r");
    render(&r, 6, 11);
    let gts = rgdkit::dataset::read_labels(&r.join("labels.jsonl")).unwrap();
    let dets = t.path().join("dets.jsonl");
    write_detections(&dets, &DetectionSet::oracle(&gts)).unwrap();
    let eval = |max_range| {
        eval_dataset(&EvalOptions {
            detections: dets.clone(),
            labels: r.clone(),
            out_dir: None,
            max_range,
            iou_threshold: 0.5,
            interpolation: ApInterpolation::HundredOne,
            verify: false,
        })
    };
    let near = gts
        .boxes
        .iter()
        .filter(|g| g.distance_m.unwrap() <= 25.0)
        .count();
    let s = eval(Some(25.0)).unwrap().summary;
    assert_eq!(s.ground_truth, near);
    assert_eq!(s.tp, near);
    assert_eq!(eval(None).unwrap().summary.ap, 1.0);

    let empty = t.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let err = eval_dataset(&EvalOptions {
        detections: dets.clone(),
        labels: empty,
        out_dir: None,
        max_range: None,
        iou_threshold: 0.5,
        interpolation: ApInterpolation::All,
        verify: false,
    })
    .unwrap_err();
    assert!(matches!(err, Error::UndefinedAp));
}
