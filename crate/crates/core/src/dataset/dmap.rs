//! `DMAP` depth-map files.
//!
//! Layout, all little-endian:
//!
//! | offset | size      | field                          |
//! |--------|-----------|--------------------------------|
//! | 0      | 4         | magic `b"DMAP"`                |
//! | 4      | 4         | `u32` width                    |
//! | 8      | 4         | `u32` height                   |
//! | 12     | 4         | `f32` max_range                |
//! | 16     | 4·w·h     | `f32` depths, row-major, `<= 0` = missing |

use std::path::Path;

use crate::error::{Error, FormatError, FormatErrorKind, Result};
use crate::geometry::DepthMap;

pub const MAGIC: [u8; 4] = *b"DMAP";
pub const HEADER_LEN: usize = 16;

pub fn encode_depth_map(d: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * d.values().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&d.width().to_le_bytes());
    out.extend_from_slice(&d.height().to_le_bytes());
    out.extend_from_slice(&d.max_range().to_le_bytes());
    for v in d.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_err(offset: usize, kind: FormatErrorKind) -> Error {
    FormatError {
        offset: offset as u64,
        kind,
    }
    .into()
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_depth_map(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.len() < 4 {
        return Err(format_err(
            bytes.len(),
            FormatErrorKind::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            },
        ));
    }
    if bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(format_err(0, FormatErrorKind::BadMagic { found }));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            FormatErrorKind::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            },
        ));
    }
    let width = le_u32(bytes, 4);
    let height = le_u32(bytes, 8);
    let max_range = f32::from_le_bytes(bytes[12..16].try_into().expect("4-byte slice"));

    let payload = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| format_err(4, FormatErrorKind::DimensionOverflow { width, height }))?;
    if !(max_range.is_finite() && max_range > 0.0) {
        return Err(format_err(
            12,
            FormatErrorKind::Header(format!("max_range {max_range} is not positive")),
        ));
    }
    if bytes.len() < payload {
        return Err(format_err(
            bytes.len(),
            FormatErrorKind::Truncated {
                expected: payload as u64,
                found: bytes.len() as u64,
            },
        ));
    }
    if bytes.len() > payload {
        return Err(format_err(
            payload,
            FormatErrorKind::TrailingBytes {
                extra: (bytes.len() - payload) as u64,
            },
        ));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    if let Some(i) = values.iter().position(|v| v.is_nan() || *v > max_range) {
        return Err(format_err(
            HEADER_LEN + 4 * i,
            FormatErrorKind::Header(format!("depth {} exceeds max_range {max_range}", values[i])),
        ));
    }
    Ok(DepthMap::from_parts_unchecked(
        width, height, max_range, values,
    ))
}

pub fn write_depth_map(path: &Path, d: &DepthMap) -> Result<()> {
    std::fs::write(path, encode_depth_map(d)).map_err(|e| Error::io(path, e))
}

pub fn read_depth_map(path: &Path) -> Result<DepthMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_depth_map(&bytes)
}
