use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rgdkit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|f| {
            (
                f.strip_prefix(dir).unwrap().to_path_buf(),
                fs::read(&f).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn render_small(dir: &Path, count: &str, extra: &[&str]) {
    let mut args = vec![
        "render",
        "--out",
        p(dir),
        "--count",
        count,
        "--width",
        "320",
        "--height",
        "109",
        "--seed",
        "1",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn render_is_byte_identical_across_runs_and_thread_counts() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    render_small(&a, "10", &["--parallelism", "1"]);
    render_small(&b, "10", &["--parallelism", "4", "--verify"]);
    let ta = tree(&a);
    assert_eq!(ta.len(), 10 * 2 + 2);
    assert_eq!(ta, tree(&b));
}

#[test]
fn render_zero_images_and_stats_header_only() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("empty");
    render_small(&d, "0", &[]);
    assert_eq!(manifest(&d)["entries"].as_array().unwrap().len(), 0);
    let csv = ok(&["stats", "--input", p(&d)]);
    assert_eq!(
        csv,
        "image_id,sample_count,ratio,h_deg_per_sample,v_deg_per_sample\n"
    );
}

#[test]
fn dense_stats_ratio_is_one() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("r");
    render_small(&d, "2", &["--set", "background_depth=500"]);
    let out = t.path().join("stats.csv");
    ok(&["stats", "--input", p(&d), "--out", p(&out)]);
    let csv = fs::read_to_string(&out).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("ALL,69760,1,"), "{last}");
}

#[test]
fn preset_density_dropout_and_downsample() {
    let t = tempfile::tempdir().unwrap();
    let (r, s, d, u) = (
        t.path().join("r"),
        t.path().join("s"),
        t.path().join("d"),
        t.path().join("u"),
    );
    ok(&["render", "--out", p(&r), "--count", "1", "--seed", "3"]);
    let base = ok(&[
        "degrade",
        "--input",
        p(&r),
        "--out",
        p(&s),
        "--preset",
        "hi02x033",
    ]);
    assert!(base.contains("20480 samples"), "{base}");
    let csv = ok(&["stats", "--input", p(&s)]);
    let ratio: f64 = csv
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.012..=0.018).contains(&ratio), "{ratio}");

    ok(&[
        "degrade",
        "--input",
        p(&r),
        "--out",
        p(&d),
        "--preset",
        "hi02x033",
        "--dropout",
        "0.2",
        "--verify",
    ]);
    ok(&[
        "degrade",
        "--input",
        p(&r),
        "--out",
        p(&u),
        "--preset",
        "hi02x033",
        "--downsample-keep",
        "0.8",
    ]);
    let count = |dir: &Path| -> f64 {
        let csv = ok(&["stats", "--input", p(dir)]);
        csv.lines()
            .last()
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(count(&d), 16384.0);
    assert!((count(&u) - count(&d)).abs() <= 0.01 * count(&d));

    let m = manifest(&d);
    assert_eq!(m["pattern_preset"], "hi02x033");
    assert_eq!(m["pattern"]["h_res"], 0.2);
    assert_eq!(m["effective_config"]["dropout"], "0.2");
}

#[test]
fn fuse_then_eval_oracle_detections() {
    let t = tempfile::tempdir().unwrap();
    let (r, s, f, e) = (
        t.path().join("r"),
        t.path().join("s"),
        t.path().join("f"),
        t.path().join("eval"),
    );
    render_small(&r, "5", &[]);
    ok(&[
        "degrade",
        "--input",
        p(&r),
        "--out",
        p(&s),
        "--preset",
        "lo04x065",
        "--clip-range",
        "76",
    ]);
    ok(&[
        "fuse",
        "--radiance",
        p(&r),
        "--depth",
        p(&s),
        "--out",
        p(&f),
        "--fill",
        "linear",
        "--verify",
    ]);
    let m = manifest(&f);
    assert_eq!(m["fill_mode"], "linear");
    assert_eq!(m["max_range"], 76.0);
    assert_eq!(m["entries"].as_array().unwrap().len(), 5);

    // Oracle detections: every label at confidence 1.
    let labels = fs::read_to_string(r.join("labels.jsonl")).unwrap();
    let dets: String = labels
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v["confidence"] = 1.0.into();
            v.to_string() + "\n"
        })
        .collect();
    let det_path = t.path().join("dets.jsonl");
    fs::write(&det_path, dets).unwrap();

    ok(&[
        "eval",
        "--detections",
        p(&det_path),
        "--labels",
        p(&f),
        "--out",
        p(&e),
        "--verify",
    ]);
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(e.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ap"], 1.0);
    assert!(fs::read_to_string(e.join("pr_curve.csv"))
        .unwrap()
        .starts_with("recall,precision\n"));
    assert!(fs::read_to_string(e.join("pr_curve.svg"))
        .unwrap()
        .contains("<svg"));

    let near = t.path().join("near");
    ok(&[
        "eval",
        "--detections",
        p(&det_path),
        "--labels",
        p(&r.join("labels.jsonl")),
        "--out",
        p(&near),
        "--max-range",
        "20",
        "--ap-interp",
        "11",
    ]);
    let s: Value =
        serde_json::from_str(&fs::read_to_string(near.join("summary.json")).unwrap()).unwrap();
    let expected = labels
        .lines()
        .filter(|l| {
            serde_json::from_str::<Value>(l).unwrap()["distance_m"]
                .as_f64()
                .unwrap()
                <= 20.0
        })
        .count();
    assert_eq!(s["ground_truth"], expected);
    assert_eq!(s["interpolation"], "11");
}

#[test]
fn config_file_and_flag_precedence() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.cfg");
    fs::write(
        &cfg,
        "count = 3\nwidth = 160\nheight = 55\ndepth_max = 30\n",
    )
    .unwrap();
    let d = t.path().join("d");
    ok(&[
        "render",
        "--config",
        p(&cfg),
        "--out",
        p(&d),
        "--count",
        "2",
    ]);
    let m = manifest(&d);
    assert_eq!(m["entries"].as_array().unwrap().len(), 2);
    assert_eq!(m["intrinsics"]["width"], 160);
    assert_eq!(m["effective_config"]["count"], "2");
    assert_eq!(m["effective_config"]["depth_max"], "30");
    assert_eq!(m["effective_config"]["size_min"], "1.5");
    assert!(m["effective_config"].get("out").is_none());
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&["render"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["render", "--out", p(t.path()), "--count", "x"]), 2);
    assert_eq!(code(&["stats", "--input", p(&t.path().join("missing"))]), 2);

    let r = t.path().join("r");
    render_small(&r, "1", &[]);
    assert_eq!(
        code(&[
            "degrade",
            "--input",
            p(&r),
            "--out",
            p(&t.path().join("x")),
            "--preset",
            "nope"
        ]),
        2
    );

    fs::write(r.join("scene_00000.dmap"), b"DMAPjunk").unwrap();
    assert_eq!(code(&["stats", "--input", p(&r)]), 3);

    let empty = t.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(
        code(&["eval", "--detections", p(&empty), "--labels", p(&empty)]),
        4
    );
}

#[test]
fn misaligned_fuse_is_a_data_error() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    render_small(&a, "2", &[]);
    render_small(&b, "3", &[]);
    let out = run(&[
        "fuse",
        "--radiance",
        p(&a),
        "--depth",
        p(&b),
        "--out",
        p(&t.path().join("f")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene_00002"));
}

#[test]
fn preprocess_crops_frames_and_shifts_labels() {
    let t = tempfile::tempdir().unwrap();
    let r = t.path().join("r");
    ok(&[
        "render",
        "--out",
        p(&r),
        "--count",
        "1",
        "--width",
        "32",
        "--height",
        "1000",
    ]);
    let frames = t.path().join("frames");
    fs::create_dir(&frames).unwrap();
    fs::copy(r.join("scene_00000.png"), frames.join("f1.png")).unwrap();
    fs::write(
        frames.join("camera.json"),
        r#"{"width":32,"height":1000,"fx":500.0,"fy":500.0,"cx":16.0,"cy":500.0}"#,
    )
    .unwrap();
    // (0, 1, 10) lands on row 500 + 50 - 257 = 293; the 90 m point is out of range
    fs::write(frames.join("f1.csv"), "x,y,z\n0,1,10\n0,0,90\n").unwrap();
    fs::write(
        frames.join("f1.jsonl"),
        concat!(
            r#"{"image_id":"x","class":"vehicle","x_min":1,"y_min":300,"x_max":9,"y_max":400,"distance_m":12}"#,
            "\n",
            r#"{"image_id":"x","class":"vehicle","x_min":1,"y_min":10,"x_max":9,"y_max":100}"#,
            "\n"
        ),
    )
    .unwrap();

    let out = t.path().join("out");
    ok(&[
        "preprocess",
        "--frames",
        p(&frames),
        "--out",
        p(&out),
        "--verify",
    ]);
    let m = manifest(&out);
    assert_eq!(m["intrinsics"]["height"], 743);
    assert_eq!(m["intrinsics"]["cy"], 500.0 - 257.0);
    assert_eq!(m["max_range"], 76.0);
    let labels = m["entries"][0]["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 1);
    assert_eq!(labels[0]["y_min"], 43.0);
    let csv = ok(&["stats", "--input", p(&out)]);
    assert!(csv.contains("f1,1,"), "{csv}");

    let shifted = t.path().join("shifted");
    ok(&[
        "preprocess",
        "--frames",
        p(&frames),
        "--out",
        p(&shifted),
        "--crop-offset",
        "0",
    ]);
    assert_eq!(manifest(&shifted)["intrinsics"]["cy"], 500.0);
    assert_eq!(
        manifest(&shifted)["entries"][0]["labels"]
            .as_array()
            .unwrap()
            .len(),
        2
    );
}
