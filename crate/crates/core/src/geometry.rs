//! Pinhole camera model and conversions between points, depth maps and point clouds.
//!
//! Camera frame: +z forward, +x right, +y down. Depth is planar z, not ray length.
//! Pixel `(u, v)` covers `[u, u+1) x [v, v+1)`, so its center sits at `(u+0.5, v+0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Field of view is derived from the focal lengths on demand,
/// so it can never drift out of sync with `fx`/`fy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("width", "must be at least 1"));
        }
        if height == 0 {
            return Err(Error::invalid("height", "must be at least 1"));
        }
        if !(fx.is_finite() && fx > 0.0) {
            return Err(Error::invalid(
                "fx",
                format!("{fx} is not a positive focal length"),
            ));
        }
        if !(fy.is_finite() && fy > 0.0) {
            return Err(Error::invalid(
                "fy",
                format!("{fy} is not a positive focal length"),
            ));
        }
        if !(0.0..=f64::from(width)).contains(&cx) {
            return Err(Error::invalid("cx", format!("{cx} outside [0, {width}]")));
        }
        if !(0.0..=f64::from(height)).contains(&cy) {
            return Err(Error::invalid("cy", format!("{cy} outside [0, {height}]")));
        }
        Ok(Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        })
    }

    /// Intrinsics for a centered principal point and the given full field of view.
    pub fn from_fov(width: u32, height: u32, hfov_deg: f64, vfov_deg: f64) -> Result<Self> {
        for (field, fov) in [("hfov", hfov_deg), ("vfov", vfov_deg)] {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(Error::invalid(field, format!("{fov} deg outside (0, 180)")));
            }
        }
        let fx = f64::from(width) / (2.0 * (hfov_deg.to_radians() / 2.0).tan());
        let fy = f64::from(height) / (2.0 * (vfov_deg.to_radians() / 2.0).tan());
        Self::new(
            width,
            height,
            fx,
            fy,
            f64::from(width) / 2.0,
            f64::from(height) / 2.0,
        )
    }

    /// 1920 x 650 sensor with a 64 x 21 degree field of view.
    pub fn automotive_default() -> Self {
        Self::from_fov(1920, 650, 64.0, 21.0).expect("constant intrinsics are valid")
    }

    pub fn hfov_deg(&self) -> f64 {
        2.0 * (f64::from(self.width) / (2.0 * self.fx))
            .atan()
            .to_degrees()
    }

    pub fn vfov_deg(&self) -> f64 {
        2.0 * (f64::from(self.height) / (2.0 * self.fy))
            .atan()
            .to_degrees()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Pixel index containing continuous image coordinate `(u, v)`, if inside the frame.
    pub fn pixel_at(&self, u: f64, v: f64) -> Option<(u32, u32)> {
        let (pu, pv) = (u.floor(), v.floor());
        if pu >= 0.0 && pv >= 0.0 && pu < f64::from(self.width) && pv < f64::from(self.height) {
            Some((pu as u32, pv as u32))
        } else {
            None
        }
    }

    /// Direction (with unit z) of the ray through continuous image coordinate `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Point3 {
        Point3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub(crate) fn check_dims(&self, width: u32, height: u32, what: &'static str) -> Result<()> {
        if width != self.width || height != self.height {
            return Err(Error::invalid(
                what,
                format!(
                    "{width}x{height} does not match camera {}x{}",
                    self.width, self.height
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Result of projecting a camera-frame point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    InFront { u: f64, v: f64, depth: f64 },
    BehindCamera,
}

pub fn project_point(p: Point3, k: &CameraIntrinsics) -> Projection {
    if p.z > 0.0 {
        Projection::InFront {
            u: k.fx * (p.x / p.z) + k.cx,
            v: k.fy * (p.y / p.z) + k.cy,
            depth: p.z,
        }
    } else {
        Projection::BehindCamera
    }
}

/// Inverse of [`project_point`] for a continuous image coordinate and planar depth.
pub fn unproject(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Point3 {
    Point3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        Self::build(points, None)
    }

    pub fn with_intensity(points: Vec<Point3>, intensity: Vec<f64>) -> Result<Self> {
        Self::build(points, Some(intensity))
    }

    fn build(points: Vec<Point3>, intensity: Option<Vec<f64>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid("points", format!("point {i} is not finite")));
        }
        if let Some(intensity) = &intensity {
            if intensity.len() != points.len() {
                return Err(Error::invalid(
                    "intensity",
                    format!("{} values for {} points", intensity.len(), points.len()),
                ));
            }
            if let Some(i) = intensity.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(
                    "intensity",
                    format!("value {i} outside [0, 1]"),
                ));
            }
        }
        Ok(Self { points, intensity })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-pixel planar depth in meters, row-major. Values `<= 0` mark missing pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    max_range: f32,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, max_range: f32, values: Vec<f32>) -> Result<Self> {
        if !(max_range.is_finite() && max_range > 0.0) {
            return Err(Error::invalid(
                "max_range",
                format!("{max_range} is not positive"),
            ));
        }
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(Error::invalid(
                "values",
                format!("{} values for a {width}x{height} map", values.len()),
            ));
        }
        if let Some(i) = values
            .iter()
            .position(|v| v.is_nan() || (*v > 0.0 && *v > max_range))
        {
            return Err(Error::invalid(
                "values",
                format!("pixel {i} = {} exceeds max_range {max_range}", values[i]),
            ));
        }
        Ok(Self {
            width,
            height,
            max_range,
            values,
        })
    }

    /// Map with every pixel missing.
    pub fn empty(width: u32, height: u32, max_range: f32) -> Result<Self> {
        Self::new(
            width,
            height,
            max_range,
            vec![0.0; width as usize * height as usize],
        )
    }

    pub(crate) fn from_parts_unchecked(
        width: u32,
        height: u32,
        max_range: f32,
        values: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(values.len(), width as usize * height as usize);
        Self {
            width,
            height,
            max_range,
            values,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn max_range(&self) -> f32 {
        self.max_range
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.values[v as usize * self.width as usize + u as usize]
    }

    pub fn is_valid_at(&self, index: usize) -> bool {
        self.values[index] > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| **v > 0.0).count()
    }

    /// Iterator over `(u, v, depth)` of valid pixels in row-major order.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (u32, u32, f32)> + '_ {
        let w = self.width as usize;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > 0.0)
            .map(move |(i, d)| ((i % w) as u32, (i / w) as u32, *d))
    }

    pub fn into_parts(self) -> (u32, u32, f32, Vec<f32>) {
        (self.width, self.height, self.max_range, self.values)
    }
}

pub fn depth_map_to_point_cloud(d: &DepthMap, k: &CameraIntrinsics) -> Result<PointCloud> {
    k.check_dims(d.width(), d.height(), "depth map")?;
    let points = d
        .valid_pixels()
        .map(|(u, v, z)| unproject(f64::from(u) + 0.5, f64::from(v) + 0.5, f64::from(z), k))
        .collect();
    Ok(PointCloud {
        points,
        intensity: None,
    })
}

/// Z-buffer rasterization: nearest point per pixel wins, empty pixels stay missing.
/// `max_range` of the result is the farthest rasterized depth (1 m for an empty map).
pub fn point_cloud_to_depth_map(c: &PointCloud, k: &CameraIntrinsics) -> DepthMap {
    let mut values = rasterize_min_depth(c, k, f32::INFINITY);
    let far = values.iter().copied().fold(0.0f32, f32::max);
    let max_range = if far > 0.0 { far } else { 1.0 };
    values.iter_mut().for_each(|v| {
        if !v.is_finite() {
            *v = 0.0
        }
    });
    DepthMap::from_parts_unchecked(k.width, k.height, max_range, values)
}

/// Z-buffer rasterization that discards points farther than `max_range`.
pub fn point_cloud_to_depth_map_within(
    c: &PointCloud,
    k: &CameraIntrinsics,
    max_range: f32,
) -> Result<DepthMap> {
    if !(max_range.is_finite() && max_range > 0.0) {
        return Err(Error::invalid(
            "max_range",
            format!("{max_range} is not positive"),
        ));
    }
    let values = rasterize_min_depth(c, k, max_range);
    Ok(DepthMap::from_parts_unchecked(
        k.width, k.height, max_range, values,
    ))
}

fn rasterize_min_depth(c: &PointCloud, k: &CameraIntrinsics, max_range: f32) -> Vec<f32> {
    let mut values = vec![0.0f32; k.pixel_count()];
    for p in c.points() {
        let Projection::InFront { u, v, depth } = project_point(*p, k) else {
            continue;
        };
        let depth = depth as f32;
        if depth <= 0.0 || depth > max_range {
            continue;
        }
        if let Some((pu, pv)) = k.pixel_at(u, v) {
            let slot = &mut values[pv as usize * k.width as usize + pu as usize];
            if *slot <= 0.0 || depth < *slot {
                *slot = depth;
            }
        }
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fov_constructor_matches_closed_form() {
        // High-precision evaluation of w / (2 tan(fov/2)).
        let k = CameraIntrinsics::from_fov(1920, 650, 64.0, 21.0).unwrap();
        assert!((k.fx - 1_536.321_147_879_408).abs() < 1e-9, "{}", k.fx);
        assert!((k.fy - 1_753.543_081_653_719_7).abs() < 1e-9, "{}", k.fy);
        assert_eq!((k.cx, k.cy), (960.0, 325.0));
    }

    #[test]
    fn ninety_degree_fov_gives_unit_focal() {
        let k = CameraIntrinsics::from_fov(2, 2, 90.0, 90.0).unwrap();
        assert!((k.fx - 1.0).abs() < 1e-15 && (k.fy - 1.0).abs() < 1e-15);
        assert_eq!((k.cx, k.cy), (1.0, 1.0));
    }

    #[test]
    fn bad_fov_names_the_field() {
        match CameraIntrinsics::from_fov(10, 10, 180.0, 20.0) {
            Err(Error::InvalidArgument { field, .. }) => assert_eq!(field, "hfov"),
            other => panic!("unexpected {other:?}"),
        }
        match CameraIntrinsics::from_fov(10, 10, 20.0, 0.0) {
            Err(Error::InvalidArgument { field, .. }) => assert_eq!(field, "vfov"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn projection_cases() {
        let k = CameraIntrinsics::new(1920, 1080, 1000.0, 1000.0, 960.0, 540.0).unwrap();
        assert_eq!(
            project_point(Point3::new(0.0, 0.0, 10.0), &k),
            Projection::InFront {
                u: 960.0,
                v: 540.0,
                depth: 10.0
            }
        );
        assert_eq!(
            project_point(Point3::new(1.0, 0.0, 10.0), &k),
            Projection::InFront {
                u: 1060.0,
                v: 540.0,
                depth: 10.0
            }
        );
        assert_eq!(
            project_point(Point3::new(0.0, 0.0, -5.0), &k),
            Projection::BehindCamera
        );
        assert_eq!(
            project_point(Point3::new(0.0, 0.0, 0.0), &k),
            Projection::BehindCamera
        );
    }

    #[test]
    fn principal_pixel_unprojects_to_axis() {
        let k = CameraIntrinsics::new(4, 4, 2.0, 2.0, 2.5, 1.5).unwrap();
        let mut values = vec![0.0; 16];
        values[4 + 2] = 7.0;
        let d = DepthMap::new(4, 4, 10.0, values).unwrap();
        let cloud = depth_map_to_point_cloud(&d, &k).unwrap();
        assert_eq!(cloud.points(), &[Point3::new(0.0, 0.0, 7.0)]);
    }

    #[test]
    fn empty_inputs() {
        let k = CameraIntrinsics::from_fov(8, 6, 60.0, 45.0).unwrap();
        let d = DepthMap::empty(8, 6, 50.0).unwrap();
        assert!(depth_map_to_point_cloud(&d, &k).unwrap().is_empty());
        let m = point_cloud_to_depth_map(&PointCloud::default(), &k);
        assert_eq!(m.valid_count(), 0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let k = CameraIntrinsics::from_fov(8, 6, 60.0, 45.0).unwrap();
        let d = DepthMap::empty(6, 8, 50.0).unwrap();
        assert!(matches!(
            depth_map_to_point_cloud(&d, &k),
            Err(Error::InvalidArgument { .. })
        ));
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let k = CameraIntrinsics::from_fov(8, 8, 60.0, 60.0).unwrap();
        let cloud =
            PointCloud::new(vec![Point3::new(0.0, 0.0, 9.0), Point3::new(0.0, 0.0, 5.0)]).unwrap();
        let m = point_cloud_to_depth_map(&cloud, &k);
        assert_eq!(m.get(4, 4), 5.0);
        assert_eq!(m.valid_count(), 1);
    }

    #[test]
    fn depth_map_rejects_values_beyond_range() {
        assert!(DepthMap::new(1, 2, 10.0, vec![5.0, 10.5]).is_err());
        assert!(DepthMap::new(1, 2, 10.0, vec![5.0]).is_err());
        assert!(DepthMap::new(1, 2, 10.0, vec![-1.0, 10.0]).is_ok());
    }

    #[test]
    fn point_cloud_rejects_non_finite() {
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 1.0)]).is_err());
        assert!(PointCloud::with_intensity(vec![Point3::new(0.0, 0.0, 1.0)], vec![1.5]).is_err());
    }

    proptest! {
        #[test]
        fn fov_round_trips(w in 1u32..4000, h in 1u32..4000, hf in 0.5f64..179.5, vf in 0.5f64..179.5) {
            let k = CameraIntrinsics::from_fov(w, h, hf, vf).unwrap();
            prop_assert!((k.hfov_deg() - hf).abs() < 1e-9);
            prop_assert!((k.vfov_deg() - vf).abs() < 1e-9);
        }

        #[test]
        fn unproject_then_project_is_identity(u in 0u32..640, v in 0u32..480, depth in 0.1f64..200.0) {
            let k = CameraIntrinsics::from_fov(640, 480, 70.0, 50.0).unwrap();
            let (uc, vc) = (f64::from(u) + 0.5, f64::from(v) + 0.5);
            let p = unproject(uc, vc, depth, &k);
            let Projection::InFront { u: pu, v: pv, depth: pd } = project_point(p, &k) else {
                return Err(TestCaseError::fail("behind camera"));
            };
            prop_assert_eq!(k.pixel_at(pu, pv), Some((u, v)));
            prop_assert!((pu - uc).abs() < 1e-6 && (pv - vc).abs() < 1e-6 && (pd - depth).abs() < 1e-6);
        }

        #[test]
        fn adding_a_point_never_increases_depth(
            pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.5f64..30.0), 0..60),
            extra in (-5.0f64..5.0, -5.0f64..5.0, 0.5f64..30.0),
        ) {
            let k = CameraIntrinsics::from_fov(32, 24, 90.0, 75.0).unwrap();
            let base: Vec<Point3> = pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
            let mut more = base.clone();
            more.push(Point3::new(extra.0, extra.1, extra.2));
            let a = point_cloud_to_depth_map(&PointCloud::new(base).unwrap(), &k);
            let b = point_cloud_to_depth_map(&PointCloud::new(more).unwrap(), &k);
            for (da, db) in a.values().iter().zip(b.values()) {
                if *da > 0.0 {
                    prop_assert!(*db > 0.0 && db <= da);
                }
            }
        }
    }
}
