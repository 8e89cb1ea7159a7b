//! Preprocessing of pre-extracted real-world frames (camera PNG + LiDAR point cloud
//! in the camera frame): crop away the sky rows the LiDAR never sees, shift the
//! principal point, rasterize the cloud and clip it to the sensor range.

use crate::error::{Error, Result};
use crate::fusion::RadianceImage;
use crate::geometry::{point_cloud_to_depth_map_within, CameraIntrinsics, DepthMap, PointCloud};

pub const CROP_ROWS: u32 = 743;
pub const LIDAR_MAX_RANGE_M: f32 = 76.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaymoOptions {
    pub crop_rows: u32,
    /// First kept row; `None` keeps the bottom `crop_rows` rows.
    pub crop_offset: Option<u32>,
    pub max_range: f32,
}

impl Default for WaymoOptions {
    fn default() -> Self {
        Self {
            crop_rows: CROP_ROWS,
            crop_offset: None,
            max_range: LIDAR_MAX_RANGE_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaymoFrame {
    pub radiance: RadianceImage,
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
}

pub fn waymo_preprocess(
    radiance: &RadianceImage,
    cloud: &PointCloud,
    k: &CameraIntrinsics,
) -> Result<WaymoFrame> {
    waymo_preprocess_with(radiance, cloud, k, &WaymoOptions::default())
}

pub fn waymo_preprocess_with(
    radiance: &RadianceImage,
    cloud: &PointCloud,
    k: &CameraIntrinsics,
    opts: &WaymoOptions,
) -> Result<WaymoFrame> {
    k.check_dims(radiance.width(), radiance.height(), "radiance")?;
    if radiance.height() < opts.crop_rows {
        return Err(Error::invalid(
            "radiance",
            format!(
                "height {} is smaller than the {} cropped rows",
                radiance.height(),
                opts.crop_rows
            ),
        ));
    }
    let offset = opts
        .crop_offset
        .unwrap_or(radiance.height() - opts.crop_rows);
    let cropped = radiance.crop_rows(offset, opts.crop_rows)?;
    let intrinsics = CameraIntrinsics::new(
        k.width,
        opts.crop_rows,
        k.fx,
        k.fy,
        k.cx,
        k.cy - f64::from(offset),
    )?;
    let depth = point_cloud_to_depth_map_within(cloud, &intrinsics, opts.max_range)?;
    Ok(WaymoFrame {
        radiance: cropped,
        depth,
        intrinsics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    #[test]
    fn undersized_image_rejected() {
        let k = CameraIntrinsics::from_fov(16, 700, 50.0, 40.0).unwrap();
        let img = RadianceImage::from_interleaved(16, 700, &vec![0; 16 * 700 * 3]).unwrap();
        assert!(matches!(
            waymo_preprocess(&img, &PointCloud::default(), &k),
            Err(Error::InvalidArgument { .. })
        ));
    }

    #[test]
    fn explicit_offset_is_honored() {
        let k = CameraIntrinsics::new(4, 800, 500.0, 500.0, 2.0, 400.0).unwrap();
        let img = RadianceImage::from_interleaved(4, 800, &vec![7; 4 * 800 * 3]).unwrap();
        let opts = WaymoOptions {
            crop_offset: Some(10),
            ..WaymoOptions::default()
        };
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 30.0)]).unwrap();
        let f = waymo_preprocess_with(&img, &cloud, &k, &opts).unwrap();
        assert_eq!(f.intrinsics.cy, 390.0);
        assert_eq!(f.depth.get(2, 390), 30.0);
    }
}
