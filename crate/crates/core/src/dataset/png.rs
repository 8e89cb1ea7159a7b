//! 8-bit RGB PNG persistence for radiance and RGD images.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::fusion::{Plane8, RadianceImage, RgdImage, RgdMetadata};

fn write_rgb(path: &Path, width: u32, height: u32, rgb: Vec<u8>) -> Result<()> {
    let img = RgbImage::from_raw(width, height, rgb).expect("buffer sized from planes");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    Ok(img.into_rgb8())
}

pub fn write_radiance_png(path: &Path, img: &RadianceImage) -> Result<()> {
    write_rgb(path, img.width(), img.height(), img.to_interleaved())
}

pub fn read_radiance_png(path: &Path) -> Result<RadianceImage> {
    let rgb = read_rgb(path)?;
    RadianceImage::from_interleaved(rgb.width(), rgb.height(), rgb.as_raw())
}

pub fn write_rgd_png(path: &Path, img: &RgdImage) -> Result<()> {
    write_rgb(path, img.width(), img.height(), img.to_interleaved())
}

/// Reads an RGD PNG; the metadata lives in the manifest, not in the file.
pub fn read_rgd_png(path: &Path, meta: RgdMetadata) -> Result<RgdImage> {
    let rgb = read_rgb(path)?;
    let planes = RadianceImage::from_interleaved(rgb.width(), rgb.height(), rgb.as_raw())?;
    Ok(RgdImage {
        red: planes.red,
        green: planes.green,
        depth: planes.blue,
        max_range: meta.max_range,
        fill_mode: meta.fill_mode,
    })
}

/// Single 8-bit plane as a grayscale PNG (used for debug dumps of the D channel).
pub fn write_plane_png(path: &Path, plane: &Plane8) -> Result<()> {
    let img = image::GrayImage::from_raw(plane.width(), plane.height(), plane.data().to_vec())
        .expect("buffer sized from plane");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}
