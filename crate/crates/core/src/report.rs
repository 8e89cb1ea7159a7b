//! Result files: PR-curve CSV, density CSV, and self-contained SVG plots that carry
//! their data table in a leading comment.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::lidar::DensityReport;
use crate::metrics::{ApInterpolation, EvalResult};

/// JSON summary written next to every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ground_truth: usize,
    pub detections: usize,
    pub iou_threshold: f64,
    pub interpolation: ApInterpolation,
    pub max_range: Option<f64>,
}

impl EvalSummary {
    pub fn new(
        r: &EvalResult,
        ground_truth: usize,
        detections: usize,
        max_range: Option<f64>,
    ) -> Self {
        Self {
            ap: r.ap,
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
            ground_truth,
            detections,
            iou_threshold: r.iou_threshold,
            interpolation: r.interpolation,
            max_range,
        }
    }
}

pub fn pr_curve_csv(r: &EvalResult) -> String {
    let mut out = String::from("recall,precision\n");
    for p in &r.pr_curve {
        let _ = writeln!(out, "{},{}", p.recall, p.precision);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub image_id: String,
    pub report: DensityReport,
}

pub const DENSITY_HEADER: &str = "image_id,sample_count,ratio,h_deg_per_sample,v_deg_per_sample";

pub fn density_csv(rows: &[DensityRow], aggregate: Option<&DensityReport>) -> String {
    let mut out = format!("{DENSITY_HEADER}\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut line = |id: &str, r: &DensityReport| {
        let _ = writeln!(
            out,
            "{id},{},{},{},{}",
            r.sample_count,
            r.ratio,
            opt(r.h_deg_per_sample),
            opt(r.v_deg_per_sample)
        );
    };
    for row in rows {
        line(&row.image_id, &row.report);
    }
    if let Some(agg) = aggregate {
        line("ALL", agg);
    }
    out
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PLOT_X0: f64 = 60.0;
const PLOT_Y0: f64 = 30.0;
const PLOT_W: f64 = 360.0;
const PLOT_H: f64 = 280.0;

fn px(recall: f64) -> f64 {
    PLOT_X0 + recall * PLOT_W
}

fn py(precision: f64) -> f64 {
    PLOT_Y0 + (1.0 - precision) * PLOT_H
}

/// Precision-recall curve (left) and an AP bar (right) in one SVG.
pub fn eval_svg(r: &EvalResult, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, "<!--\ndata: pr_curve\nrecall,precision");
    for p in &r.pr_curve {
        let _ = writeln!(s, "{},{}", p.recall, p.precision);
    }
    let _ = writeln!(
        s,
        "data: summary\nap,{}\ntp,{}\nfp,{}\nfn,{}\n-->",
        r.ap, r.tp, r.fp, r.fn_
    );
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );

    // axes and grid
    let _ = writeln!(
        s,
        r##"<rect x="{PLOT_X0}" y="{PLOT_Y0}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=5 {
        let t = f64::from(i) / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="#ddd"/><text x="{x}" y="{ty}" text-anchor="middle">{t:.1}</text>"##,
            x = px(t),
            y0 = PLOT_Y0,
            y1 = PLOT_Y0 + PLOT_H,
            ty = PLOT_Y0 + PLOT_H + 16.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/><text x="{tx}" y="{ty}" text-anchor="end">{t:.1}</text>"##,
            x0 = PLOT_X0,
            x1 = PLOT_X0 + PLOT_W,
            y = py(t),
            tx = PLOT_X0 - 6.0,
            ty = py(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">recall</text>"#,
        PLOT_X0 + PLOT_W / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">precision</text>"#,
        PLOT_Y0 + PLOT_H / 2.0,
        PLOT_Y0 + PLOT_H / 2.0
    );

    if !r.pr_curve.is_empty() {
        let mut pts = format!("{},{}", px(0.0), py(r.pr_curve[0].precision));
        for p in &r.pr_curve {
            let _ = write!(pts, " {:.2},{:.2}", px(p.recall), py(p.precision));
        }
        let _ = writeln!(
            s,
            r##"<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##
        );
    }

    // AP bar
    let bar_x = PLOT_X0 + PLOT_W + 70.0;
    let bar_h = r.ap.clamp(0.0, 1.0) * PLOT_H;
    let _ = writeln!(
        s,
        r##"<rect x="{bar_x}" y="{}" width="60" height="{bar_h:.2}" fill="#2ca02c"/>"##,
        PLOT_Y0 + PLOT_H - bar_h
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">AP {:.3}</text>"#,
        bar_x + 30.0,
        PLOT_Y0 + PLOT_H + 16.0,
        r.ap
    );
    let _ = writeln!(s, "</svg>");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
