//! RGD early fusion: quantize depth to 8 bits, fill gaps, and swap it into the
//! blue channel of a radiance image.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DepthMap;

/// Row-major 8-bit image plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane8 {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Plane8 {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::invalid(
                "plane",
                format!("{} bytes for a {width}x{height} plane", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

/// 8-bit plane with a per-pixel validity mask; masked-out values are meaningless.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedPlane {
    pub plane: Plane8,
    pub valid: Vec<bool>,
}

impl MaskedPlane {
    pub fn new(plane: Plane8, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != plane.data.len() {
            return Err(Error::invalid(
                "valid",
                "mask length differs from plane length",
            ));
        }
        Ok(Self { plane, valid })
    }

    /// A dense plane viewed as fully valid.
    pub fn dense(plane: Plane8) -> Self {
        let valid = vec![true; plane.data.len()];
        Self { plane, valid }
    }
}

/// Camera image as three 8-bit planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadianceImage {
    pub red: Plane8,
    pub green: Plane8,
    pub blue: Plane8,
}

impl RadianceImage {
    pub fn from_planes(red: Plane8, green: Plane8, blue: Plane8) -> Result<Self> {
        if red.dims() != green.dims() || red.dims() != blue.dims() {
            return Err(Error::invalid("radiance", "channel planes differ in size"));
        }
        Ok(Self { red, green, blue })
    }

    /// Build from interleaved RGB bytes.
    pub fn from_interleaved(width: u32, height: u32, rgb: &[u8]) -> Result<Self> {
        let n = width as usize * height as usize;
        if rgb.len() != 3 * n {
            return Err(Error::invalid(
                "radiance",
                format!("{} bytes for {n} RGB pixels", rgb.len()),
            ));
        }
        let channel = |c: usize| rgb.iter().skip(c).step_by(3).copied().collect::<Vec<u8>>();
        Ok(Self {
            red: Plane8 {
                width,
                height,
                data: channel(0),
            },
            green: Plane8 {
                width,
                height,
                data: channel(1),
            },
            blue: Plane8 {
                width,
                height,
                data: channel(2),
            },
        })
    }

    pub fn to_interleaved(&self) -> Vec<u8> {
        interleave(&self.red, &self.green, &self.blue)
    }

    pub fn width(&self) -> u32 {
        self.red.width
    }

    pub fn height(&self) -> u32 {
        self.red.height
    }

    /// Keeps rows `offset..offset + rows`.
    pub fn crop_rows(&self, offset: u32, rows: u32) -> Result<Self> {
        if offset
            .checked_add(rows)
            .is_none_or(|end| end > self.height())
        {
            return Err(Error::invalid(
                "crop",
                format!(
                    "rows {offset}..{} exceed image height {}",
                    u64::from(offset) + u64::from(rows),
                    self.height()
                ),
            ));
        }
        let w = self.width() as usize;
        let crop = |p: &Plane8| Plane8 {
            width: p.width,
            height: rows,
            data: p.data[offset as usize * w..(offset + rows) as usize * w].to_vec(),
        };
        Ok(Self {
            red: crop(&self.red),
            green: crop(&self.green),
            blue: crop(&self.blue),
        })
    }
}

fn interleave(a: &Plane8, b: &Plane8, c: &Plane8) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.data.len() * 3);
    for ((x, y), z) in a.data.iter().zip(&b.data).zip(&c.data) {
        out.extend_from_slice(&[*x, *y, *z]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    Zero,
    Linear,
}

impl fmt::Display for FillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FillMode::Zero => "zero",
            FillMode::Linear => "linear",
        })
    }
}

impl FromStr for FillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(FillMode::Zero),
            "linear" => Ok(FillMode::Linear),
            other => Err(Error::invalid(
                "fill_mode",
                format!("`{other}` is not one of zero, linear"),
            )),
        }
    }
}

/// Fused image: camera red and green, quantized depth in place of blue.
#[derive(Debug, Clone, PartialEq)]
pub struct RgdImage {
    pub red: Plane8,
    pub green: Plane8,
    pub depth: Plane8,
    pub max_range: f32,
    pub fill_mode: FillMode,
}

impl RgdImage {
    pub fn width(&self) -> u32 {
        self.red.width
    }

    pub fn height(&self) -> u32 {
        self.red.height
    }

    pub fn to_interleaved(&self) -> Vec<u8> {
        interleave(&self.red, &self.green, &self.depth)
    }
}

/// Metadata that travels alongside an RGD image (the manifest holds it on disk).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgdMetadata {
    pub max_range: f32,
    pub fill_mode: FillMode,
}

/// Half-away-from-zero rounding of `255 * min(depth, max_range) / max_range`.
pub fn quantize_value(depth: f32, max_range: f32) -> u8 {
    let normalized = f64::from(depth.min(max_range)) / f64::from(max_range);
    (255.0 * normalized).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize_value(code: u8, max_range: f32) -> f64 {
    f64::from(code) * f64::from(max_range) / 255.0
}

/// Quantize every valid pixel; missing pixels are flagged in the mask and left at 0.
pub fn quantize_depth(d: &DepthMap, max_range: f32) -> Result<MaskedPlane> {
    if !(max_range.is_finite() && max_range > 0.0) {
        return Err(Error::invalid(
            "max_range",
            format!("{max_range} is not positive"),
        ));
    }
    let mut data = Vec::with_capacity(d.values().len());
    let mut valid = Vec::with_capacity(d.values().len());
    for &z in d.values() {
        if z > 0.0 {
            data.push(quantize_value(z, max_range));
            valid.push(true);
        } else {
            data.push(0);
            valid.push(false);
        }
    }
    Ok(MaskedPlane {
        plane: Plane8 {
            width: d.width(),
            height: d.height(),
            data,
        },
        valid,
    })
}

pub fn fill_missing(masked: &MaskedPlane, mode: FillMode) -> Plane8 {
    match mode {
        FillMode::Zero => fill_zero(masked),
        FillMode::Linear => fill_linear(masked),
    }
}

fn fill_zero(masked: &MaskedPlane) -> Plane8 {
    let data = masked
        .plane
        .data
        .iter()
        .zip(&masked.valid)
        .map(|(v, ok)| if *ok { *v } else { 0 })
        .collect();
    Plane8 {
        data,
        ..masked.plane.clone()
    }
}

/// Scanline interpolation, border runs extended, empty rows copied from the
/// nearest non-empty row (ties go to the row above).
fn fill_linear(masked: &MaskedPlane) -> Plane8 {
    let (w, h) = (masked.plane.width as usize, masked.plane.height as usize);
    let mut out = vec![0u8; w * h];
    let mut filled_rows = vec![false; h];

    for row in 0..h {
        let values = &masked.plane.data[row * w..(row + 1) * w];
        let valid = &masked.valid[row * w..(row + 1) * w];
        let anchors: Vec<usize> = (0..w).filter(|&i| valid[i]).collect();
        let (Some(&first), Some(&last)) = (anchors.first(), anchors.last()) else {
            continue;
        };
        let dst = &mut out[row * w..(row + 1) * w];
        dst[..first].fill(values[first]);
        dst[last..].fill(values[last]);
        for pair in anchors.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (va, vb) = (f64::from(values[a]), f64::from(values[b]));
            dst[a] = values[a];
            for (i, slot) in dst.iter_mut().enumerate().take(b).skip(a + 1) {
                let t = (i - a) as f64 / (b - a) as f64;
                *slot = (va + (vb - va) * t).round() as u8;
            }
        }
        filled_rows[row] = true;
    }

    let sources: Vec<usize> = (0..h).filter(|&r| filled_rows[r]).collect();
    if !sources.is_empty() {
        for row in (0..h).filter(|&r| !filled_rows[r]) {
            let nearest = sources
                .iter()
                .copied()
                .min_by_key(|&s| (s.abs_diff(row), s > row))
                .expect("non-empty");
            out.copy_within(nearest * w..(nearest + 1) * w, row * w);
        }
    }
    Plane8 {
        width: w as u32,
        height: h as u32,
        data: out,
    }
}

pub fn compose_rgd(
    radiance: &RadianceImage,
    depth: &Plane8,
    fill_mode: FillMode,
    max_range: f32,
) -> Result<RgdImage> {
    if depth.dims() != radiance.red.dims() {
        return Err(Error::invalid(
            "depth_plane",
            format!(
                "{}x{} does not match radiance {}x{}",
                depth.width,
                depth.height,
                radiance.width(),
                radiance.height()
            ),
        ));
    }
    Ok(RgdImage {
        red: radiance.red.clone(),
        green: radiance.green.clone(),
        depth: depth.clone(),
        max_range,
        fill_mode,
    })
}

pub fn decompose_rgd(img: &RgdImage) -> (Plane8, Plane8, Plane8, RgdMetadata) {
    (
        img.red.clone(),
        img.green.clone(),
        img.depth.clone(),
        RgdMetadata {
            max_range: img.max_range,
            fill_mode: img.fill_mode,
        },
    )
}
