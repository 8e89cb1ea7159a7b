//! LiDAR-style degradation of dense depth: angular sampling grids, random dropout,
//! regular downsampling, range clipping and density statistics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap};

/// Tolerance used when deciding whether a grid endpoint or pixel boundary is hit exactly.
const GRID_EPS: f64 = 1e-9;

/// Built-in presets shipped with the crate.
pub const DEFAULT_PRESETS: &str = include_str!("../presets/lidar_patterns.toml");

/// Regular angular sampling grid, in degrees relative to the optical axis.
/// Positive vertical angles point down (image +y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPattern {
    pub h_res: f64,
    pub v_res: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl SamplingPattern {
    /// Grid spanning the camera's full field of view.
    pub fn covering(k: &CameraIntrinsics, h_res: f64, v_res: f64) -> Result<Self> {
        let (h, v) = (k.hfov_deg() / 2.0, k.vfov_deg() / 2.0);
        let p = Self {
            h_res,
            v_res,
            h_min: -h,
            h_max: h,
            v_min: -v,
            v_max: v,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_res > 0.0 && self.h_res.is_finite()) {
            return Err(Error::invalid(
                "h_res",
                format!("{} is not positive", self.h_res),
            ));
        }
        if !(self.v_res > 0.0 && self.v_res.is_finite()) {
            return Err(Error::invalid(
                "v_res",
                format!("{} is not positive", self.v_res),
            ));
        }
        if !(self.h_min <= self.h_max && self.h_min > -90.0 && self.h_max < 90.0) {
            return Err(Error::invalid("h_min", "need -90 < h_min <= h_max < 90"));
        }
        if !(self.v_min <= self.v_max && self.v_min > -90.0 && self.v_max < 90.0) {
            return Err(Error::invalid("v_min", "need -90 < v_min <= v_max < 90"));
        }
        Ok(())
    }

    pub fn horizontal_angles(&self) -> Vec<f64> {
        grid_angles(self.h_min, self.h_max, self.h_res)
    }

    pub fn vertical_angles(&self) -> Vec<f64> {
        grid_angles(self.v_min, self.v_max, self.v_res)
    }
}

fn grid_angles(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + GRID_EPS).floor() as usize + 1;
    (0..n).map(|i| lo + i as f64 * step).collect()
}

/// Pixel coordinate along one axis hit by a direction at `angle_deg`.
fn axis_pixel(angle_deg: f64, focal: f64, center: f64, size: u32) -> Option<u32> {
    let mut x = focal * angle_deg.to_radians().tan() + center;
    if (x - x.round()).abs() < GRID_EPS {
        x = x.round();
    }
    let p = x.floor();
    (p >= 0.0 && p < f64::from(size)).then_some(p as u32)
}

/// Distinct image columns and rows hit by the pattern's directions, ascending.
pub fn pattern_axes(p: &SamplingPattern, k: &CameraIntrinsics) -> (Vec<u32>, Vec<u32>) {
    let mut cols: Vec<u32> = p
        .horizontal_angles()
        .into_iter()
        .filter_map(|a| axis_pixel(a, k.fx, k.cx, k.width))
        .collect();
    let mut rows: Vec<u32> = p
        .vertical_angles()
        .into_iter()
        .filter_map(|a| axis_pixel(a, k.fy, k.cy, k.height))
        .collect();
    cols.sort_unstable();
    cols.dedup();
    rows.sort_unstable();
    rows.dedup();
    (cols, rows)
}

/// Pixels `(u, v)` sampled by the pattern, merged and in row-major order.
pub fn pattern_pixels(p: &SamplingPattern, k: &CameraIntrinsics) -> Vec<(u32, u32)> {
    let (cols, rows) = pattern_axes(p, k);
    rows.iter()
        .flat_map(|&v| cols.iter().map(move |&u| (u, v)))
        .collect()
}

/// Depth map that is valid only where a LiDAR return was kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepth {
    map: DepthMap,
    sample_count: usize,
}

impl SparseDepth {
    pub fn from_map(map: DepthMap) -> Self {
        let sample_count = map.valid_count();
        Self { map, sample_count }
    }

    pub fn map(&self) -> &DepthMap {
        &self.map
    }

    pub fn into_map(self) -> DepthMap {
        self.map
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    fn with_values(&self, values: Vec<f32>) -> Self {
        let map = DepthMap::from_parts_unchecked(
            self.map.width(),
            self.map.height(),
            self.map.max_range(),
            values,
        );
        Self::from_map(map)
    }
}

pub fn sample_depth(
    d: &DepthMap,
    p: &SamplingPattern,
    k: &CameraIntrinsics,
) -> Result<SparseDepth> {
    k.check_dims(d.width(), d.height(), "depth map")?;
    p.validate()?;
    let mut values = vec![0.0f32; d.values().len()];
    let w = d.width() as usize;
    for (u, v) in pattern_pixels(p, k) {
        let i = v as usize * w + u as usize;
        if d.values()[i] > 0.0 {
            values[i] = d.values()[i];
        }
    }
    Ok(SparseDepth::from_map(DepthMap::from_parts_unchecked(
        d.width(),
        d.height(),
        d.max_range(),
        values,
    )))
}

/// Invalidates exactly `round(fraction * sample_count)` samples chosen uniformly.
pub fn dropout(s: &SparseDepth, fraction: f64, seed: u64) -> Result<SparseDepth> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(
            "fraction",
            format!("{fraction} outside [0, 1]"),
        ));
    }
    let valid: Vec<usize> = (0..s.map.values().len())
        .filter(|&i| s.map.is_valid_at(i))
        .collect();
    let remove = (fraction * valid.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = s.map.values().to_vec();
    for pick in index::sample(&mut rng, valid.len(), remove) {
        values[valid[pick]] = 0.0;
    }
    Ok(s.with_values(values))
}

/// Keep `keep` of `n` evenly spaced indices (exactly `keep` are kept).
fn bresenham_keep(n: usize, keep: usize) -> Vec<bool> {
    (0..n).map(|j| (j + 1) * keep / n > j * keep / n).collect()
}

/// Deterministic reduction to about `keep_fraction` of the samples by dropping whole,
/// evenly spaced columns (or rows) of the sample grid.
pub fn uniform_downsample(s: &SparseDepth, keep_fraction: f64) -> Result<SparseDepth> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(
            "keep_fraction",
            format!("{keep_fraction} outside (0, 1]"),
        ));
    }
    let w = s.map.width() as usize;
    let target = (keep_fraction * s.sample_count as f64).round() as usize;
    let valid: Vec<(usize, usize)> = s
        .map
        .valid_pixels()
        .map(|(u, v, _)| (u as usize, v as usize))
        .collect();

    let lines = |axis: usize| -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for p in &valid {
            *m.entry(if axis == 0 { p.0 } else { p.1 }).or_insert(0) += 1;
        }
        m
    };

    // (count, axis, kept line ids)
    let mut candidates: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for axis in 0..2 {
        let per_line = lines(axis);
        let ids: Vec<usize> = per_line.keys().copied().collect();
        let n = ids.len();
        if n == 0 {
            continue;
        }
        let base = (keep_fraction * n as f64).round() as usize;
        for keep in [base, base.saturating_sub(1), base + 1] {
            let keep = keep.clamp(1, n);
            let mask = bresenham_keep(n, keep);
            let kept: Vec<usize> = ids
                .iter()
                .zip(&mask)
                .filter(|(_, k)| **k)
                .map(|(id, _)| *id)
                .collect();
            let count = kept.iter().map(|id| per_line[id]).sum();
            candidates.push((count, axis, kept));
        }
    }

    let tolerance = 0.01 * target as f64;
    let best = candidates
        .iter()
        .min_by_key(|(count, axis, _)| (count.abs_diff(target), *axis))
        .filter(|(count, _, _)| count.abs_diff(target) as f64 <= tolerance);

    let Some((_, axis, kept)) = best else {
        let mut achievable: Vec<usize> = candidates.iter().map(|c| c.0).collect();
        achievable.sort_unstable();
        achievable.dedup();
        return Err(Error::Downsample { target, achievable });
    };

    let mut values = s.map.values().to_vec();
    for (u, v) in valid {
        let line = if *axis == 0 { u } else { v };
        if kept.binary_search(&line).is_err() {
            values[v * w + u] = 0.0;
        }
    }
    Ok(s.with_values(values))
}

/// Invalidates depths beyond `max_range` (inclusive bound) and records the new range.
pub fn clip_range(d: &DepthMap, max_range: f32) -> Result<DepthMap> {
    if !(max_range > 0.0 && max_range.is_finite()) {
        return Err(Error::invalid(
            "max_range",
            format!("{max_range} is not positive"),
        ));
    }
    let values = d
        .values()
        .iter()
        .map(|&z| if z > max_range { 0.0 } else { z })
        .collect();
    Ok(DepthMap::from_parts_unchecked(
        d.width(),
        d.height(),
        max_range,
        values,
    ))
}

pub fn clip_range_sparse(s: &SparseDepth, max_range: f32) -> Result<SparseDepth> {
    Ok(SparseDepth::from_map(clip_range(&s.map, max_range)?))
}

/// Adds zero-mean Gaussian range error (sigma in meters) to every sample. Noisy values
/// stay inside `(0, max_range]`.
pub fn add_range_noise(s: &SparseDepth, sigma: f64, seed: u64) -> Result<SparseDepth> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("{sigma} is negative")));
    }
    if sigma == 0.0 {
        return Ok(s.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = s.map.max_range();
    let values = s
        .map
        .values()
        .iter()
        .map(|&z| {
            if z > 0.0 {
                ((f64::from(z) + normal.sample(&mut rng)) as f32).clamp(f32::MIN_POSITIVE, max)
            } else {
                z
            }
        })
        .collect();
    Ok(s.with_values(values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub sample_count: usize,
    /// Samples per camera pixel.
    pub ratio: f64,
    /// Median over image rows of the mean angular gap between samples in that row.
    pub h_deg_per_sample: Option<f64>,
    /// Median over image columns of the mean angular gap between samples in that column.
    pub v_deg_per_sample: Option<f64>,
}

pub fn density_report(s: &SparseDepth, k: &CameraIntrinsics) -> DensityReport {
    let sample_count = s.sample_count;
    let ratio = sample_count as f64 / k.pixel_count() as f64;
    if sample_count < 2 {
        return DensityReport {
            sample_count,
            ratio,
            h_deg_per_sample: None,
            v_deg_per_sample: None,
        };
    }
    let h_angle = |u: u32| ((f64::from(u) + 0.5 - k.cx) / k.fx).atan().to_degrees();
    let v_angle = |v: u32| ((f64::from(v) + 0.5 - k.cy) / k.fy).atan().to_degrees();

    let mut by_row: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut by_col: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (u, v, _) in s.map.valid_pixels() {
        by_row.entry(v).or_default().push(h_angle(u));
        by_col.entry(u).or_default().push(v_angle(v));
    }
    DensityReport {
        sample_count,
        ratio,
        h_deg_per_sample: median_line_spacing(by_row.values()),
        v_deg_per_sample: median_line_spacing(by_col.values()),
    }
}

fn median_line_spacing<'a>(lines: impl Iterator<Item = &'a Vec<f64>>) -> Option<f64> {
    let mut spacings: Vec<f64> = lines
        .filter(|a| a.len() >= 2)
        .map(|a| {
            let (lo, hi) = a
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| {
                    (l.min(x), h.max(x))
                });
            (hi - lo) / (a.len() - 1) as f64
        })
        .collect();
    if spacings.is_empty() {
        return None;
    }
    spacings.sort_by(f64::total_cmp);
    let mid = spacings.len() / 2;
    Some(if spacings.len() % 2 == 1 {
        spacings[mid]
    } else {
        0.5 * (spacings[mid - 1] + spacings[mid])
    })
}

/// Named sampling patterns, loaded from TOML:
///
/// ```toml
/// [presets.h02x033]
/// h_res = 0.2
/// v_res = 0.33
/// h_min = -32.0
/// h_max = 32.0
/// v_min = -10.5
/// v_max = 10.5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternPresets {
    pub presets: BTreeMap<String, SamplingPattern>,
}

impl PatternPresets {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_PRESETS).expect("bundled presets parse")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let presets: Self = toml::from_str(text)
            .map_err(|e| Error::invalid("patterns", format!("bad preset file: {e}")))?;
        for p in presets.presets.values() {
            p.validate()?;
        }
        Ok(presets)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, name: &str) -> Result<&SamplingPattern> {
        self.presets.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.presets.keys().map(String::as_str).collect();
            Error::invalid(
                "preset",
                format!("unknown preset `{name}` (known: {})", known.join(", ")),
            )
        })
    }
}
