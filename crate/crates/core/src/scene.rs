//! Synthetic driving scenes: axis-aligned boxes standing on a ground plane in front
//! of a background wall, ray cast into depth, radiance and 2D labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::fusion::{Plane8, RadianceImage};
use crate::geometry::{project_point, CameraIntrinsics, DepthMap, Point3, Projection};
use crate::metrics::{Box2D, GroundTruth, GroundTruthSet};

/// Maximum rejection-sampling attempts per asset.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Sub-exposure renders averaged for motion blur.
pub const BLUR_SUBFRAMES: usize = 8;
/// Near clipping distance applied to boxes straddling the camera plane when labeling.
const LABEL_NEAR_CLIP: f64 = 1e-3;

const GROUND_ALBEDO: [f64; 3] = [0.32, 0.32, 0.30];
const BACKGROUND_ALBEDO: [f64; 3] = [0.62, 0.74, 0.88];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetClass {
    Vehicle,
    Distractor,
}

impl AssetClass {
    pub fn label(&self) -> &'static str {
        match self {
            AssetClass::Vehicle => "vehicle",
            AssetClass::Distractor => "distractor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::invalid(
                "aabb",
                format!("min {min:?} not below max {max:?}"),
            ));
        }
        Ok(Self { min, max })
    }

    /// True when the interiors intersect; touching faces do not count.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.min.x < other.max.x
            && other.min.x < self.max.x
            && self.min.y < other.max.y
            && other.min.y < self.max.y
            && self.min.z < other.max.z
            && other.min.z < self.max.z
    }

    pub fn translated(&self, d: Point3) -> Aabb {
        Aabb {
            min: Point3::new(self.min.x + d.x, self.min.y + d.y, self.min.z + d.z),
            max: Point3::new(self.max.x + d.x, self.max.y + d.y, self.max.z + d.z),
        }
    }

    pub fn corners(&self) -> [Point3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Point3::new(a.x, a.y, a.z),
            Point3::new(b.x, a.y, a.z),
            Point3::new(a.x, b.y, a.z),
            Point3::new(b.x, b.y, a.z),
            Point3::new(a.x, a.y, b.z),
            Point3::new(b.x, a.y, b.z),
            Point3::new(a.x, b.y, b.z),
            Point3::new(b.x, b.y, b.z),
        ]
    }

    /// Entry parameter of the ray `t * dir` from the origin (slab test).
    pub fn ray_entry(&self, dir: Point3) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for (lo, hi, d) in [
            (self.min.x, self.max.x, dir.x),
            (self.min.y, self.max.y, dir.y),
            (self.min.z, self.max.z, dir.z),
        ] {
            if d == 0.0 {
                if lo > 0.0 || hi < 0.0 {
                    return None;
                }
                continue;
            }
            let (t0, t1) = if d > 0.0 {
                (lo / d, hi / d)
            } else {
                (hi / d, lo / d)
            };
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
        }
        (t_near <= t_far && t_near > 0.0).then_some(t_near)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Asset {
    pub class: AssetClass,
    pub aabb: Aabb,
    pub albedo: [f64; 3],
    /// Meters per second in the camera frame.
    pub velocity: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub assets: Vec<Asset>,
    /// Ground plane height (+y is down, so this is the camera height above ground).
    pub ground_y: f64,
    /// Depth of the fronto-parallel background wall.
    pub background_depth: f64,
    pub rng_seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.ground_y > 0.0 && self.ground_y.is_finite()) {
            return Err(Error::invalid(
                "ground_y",
                "camera must sit above the ground plane",
            ));
        }
        if !(self.background_depth > 0.0 && self.background_depth.is_finite()) {
            return Err(Error::invalid("background_depth", "must be positive"));
        }
        for a in &self.assets {
            Aabb::new(a.aabb.min, a.aabb.max)?;
            if a.aabb.max.y > self.ground_y {
                return Err(Error::invalid(
                    "assets",
                    "asset extends below the ground plane",
                ));
            }
            if a.aabb.min.z <= 0.0 || a.aabb.max.z >= self.background_depth {
                return Err(Error::invalid(
                    "assets",
                    "asset depth outside (0, background_depth)",
                ));
            }
        }
        Ok(())
    }

    /// Scene with every asset moved by `velocity * t`.
    pub fn at_time(&self, t: f64) -> Scene {
        let mut moved = self.clone();
        for a in &mut moved.assets {
            let v = a.velocity;
            a.aabb = a.aabb.translated(Point3::new(v.x * t, v.y * t, v.z * t));
        }
        moved
    }

    fn is_static(&self) -> bool {
        self.assets.iter().all(|a| a.velocity == Point3::default())
    }
}

/// What a camera ray hit first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hit {
    Asset(usize),
    Ground,
    Background,
}

/// Nearest intersection of the ray `t * dir` (with `dir.z == 1`, so `t` is planar depth).
pub fn trace(scene: &Scene, dir: Point3) -> (f64, Hit) {
    let mut best = (scene.background_depth, Hit::Background);
    if dir.y > 0.0 {
        let t = scene.ground_y / dir.y;
        if t < best.0 {
            best = (t, Hit::Ground);
        }
    }
    for (i, asset) in scene.assets.iter().enumerate() {
        if let Some(t) = asset.aabb.ray_entry(dir) {
            if t < best.0 {
                best = (t, Hit::Asset(i));
            }
        }
    }
    best
}

fn trace_image(scene: &Scene, k: &CameraIntrinsics) -> Vec<(f64, Hit)> {
    let w = k.width as usize;
    let mut out = vec![(0.0, Hit::Background); k.pixel_count()];
    out.par_chunks_mut(w).enumerate().for_each(|(v, row)| {
        for (u, slot) in row.iter_mut().enumerate() {
            *slot = trace(scene, k.ray_direction(u as f64 + 0.5, v as f64 + 0.5));
        }
    });
    out
}

/// Dense ground-truth depth through every pixel center.
pub fn raycast_depth(scene: &Scene, k: &CameraIntrinsics) -> DepthMap {
    raycast_with_hits(scene, k).0
}

/// Depth plus the primitive each pixel hit.
pub fn raycast_with_hits(scene: &Scene, k: &CameraIntrinsics) -> (DepthMap, Vec<Hit>) {
    let traced = trace_image(scene, k);
    let values = traced.iter().map(|(t, _)| *t as f32).collect();
    let hits = traced.into_iter().map(|(_, h)| h).collect();
    let max_range = scene.background_depth as f32;
    (
        DepthMap::from_parts_unchecked(k.width, k.height, max_range, values),
        hits,
    )
}

fn albedo(scene: &Scene, hit: Hit) -> [f64; 3] {
    match hit {
        Hit::Asset(i) => scene.assets[i].albedo,
        Hit::Ground => GROUND_ALBEDO,
        Hit::Background => BACKGROUND_ALBEDO,
    }
}

/// Flat-shaded radiance. With a non-zero exposure and moving assets the image is the
/// mean of [`BLUR_SUBFRAMES`] renders at evenly spaced times in `[0, exposure]`.
pub fn raycast_radiance(
    scene: &Scene,
    k: &CameraIntrinsics,
    exposure_s: f64,
) -> Result<RadianceImage> {
    if !(exposure_s >= 0.0 && exposure_s.is_finite()) {
        return Err(Error::invalid(
            "exposure",
            format!("{exposure_s} s is negative"),
        ));
    }
    let frames: Vec<Scene> = if exposure_s == 0.0 || scene.is_static() {
        vec![scene.clone()]
    } else {
        (0..BLUR_SUBFRAMES)
            .map(|i| scene.at_time(exposure_s * i as f64 / (BLUR_SUBFRAMES - 1) as f64))
            .collect()
    };

    let mut sum = vec![[0.0f64; 3]; k.pixel_count()];
    for frame in &frames {
        let traced = trace_image(frame, k);
        for (acc, (_, hit)) in sum.iter_mut().zip(traced) {
            let c = albedo(frame, hit);
            for ch in 0..3 {
                acc[ch] += c[ch];
            }
        }
    }
    let n = frames.len() as f64;
    let channel = |ch: usize| -> Vec<u8> {
        sum.iter()
            .map(|px| (255.0 * px[ch] / n).round().clamp(0.0, 255.0) as u8)
            .collect()
    };
    let plane = |data| Plane8::new(k.width, k.height, data);
    RadianceImage::from_planes(plane(channel(0))?, plane(channel(1))?, plane(channel(2))?)
}

/// 2D labels for every vehicle, from its projected (and frame-clipped) box corners.
/// Occlusion is ignored.
pub fn ground_truth_boxes(scene: &Scene, k: &CameraIntrinsics, image_id: &str) -> GroundTruthSet {
    let boxes = scene
        .assets
        .iter()
        .filter(|a| a.class == AssetClass::Vehicle)
        .filter_map(|a| label_asset(a, k, image_id))
        .collect();
    GroundTruthSet { boxes }
}

/// Like [`ground_truth_boxes`] but drops vehicles whose visible pixel fraction inside
/// their own box is below `min_visible_fraction`.
pub fn ground_truth_boxes_visible(
    scene: &Scene,
    k: &CameraIntrinsics,
    image_id: &str,
    min_visible_fraction: f64,
) -> GroundTruthSet {
    if min_visible_fraction <= 0.0 {
        return ground_truth_boxes(scene, k, image_id);
    }
    let (_, hits) = raycast_with_hits(scene, k);
    let w = k.width as usize;
    let boxes = scene
        .assets
        .iter()
        .enumerate()
        .filter(|(_, a)| a.class == AssetClass::Vehicle)
        .filter_map(|(i, a)| {
            let label = label_asset(a, k, image_id)?;
            let b = &label.bbox;
            let (u0, u1) = (
                b.x_min.floor() as usize,
                (b.x_max.ceil() as usize).min(k.width as usize),
            );
            let (v0, v1) = (
                b.y_min.floor() as usize,
                (b.y_max.ceil() as usize).min(k.height as usize),
            );
            let total = (u1 - u0) * (v1 - v0);
            let seen = (v0..v1)
                .flat_map(|v| (u0..u1).map(move |u| v * w + u))
                .filter(|&p| hits[p] == Hit::Asset(i))
                .count();
            (total > 0 && seen as f64 / total as f64 >= min_visible_fraction).then_some(label)
        })
        .collect();
    GroundTruthSet { boxes }
}

fn label_asset(asset: &Asset, k: &CameraIntrinsics, image_id: &str) -> Option<GroundTruth> {
    let mut aabb = asset.aabb;
    if aabb.max.z <= LABEL_NEAR_CLIP {
        return None;
    }
    aabb.min.z = aabb.min.z.max(LABEL_NEAR_CLIP);

    let (mut u0, mut v0) = (f64::INFINITY, f64::INFINITY);
    let (mut u1, mut v1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in aabb.corners() {
        if let Projection::InFront { u, v, .. } = project_point(corner, k) {
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
    }
    let (w, h) = (f64::from(k.width), f64::from(k.height));
    let (u0, u1, v0, v1) = (
        u0.clamp(0.0, w),
        u1.clamp(0.0, w),
        v0.clamp(0.0, h),
        v1.clamp(0.0, h),
    );
    let bbox = Box2D::new(u0, v0, u1, v1, asset.class.label()).ok()?;
    Some(GroundTruth {
        image_id: image_id.to_string(),
        bbox,
        distance_m: Some(aabb.min.z),
    })
}

/// Parameters for random scene generation. Keys match the `key = value` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub asset_count_min: usize,
    pub asset_count_max: usize,
    pub distractor_count_min: usize,
    pub distractor_count_max: usize,
    /// Range of the near-face depth of each asset.
    pub depth_min: f64,
    pub depth_max: f64,
    /// Range of every box edge length.
    pub size_min: f64,
    pub size_max: f64,
    /// Box centers are drawn from `[-lateral_max, lateral_max]` in x.
    pub lateral_max: f64,
    /// Each velocity component along x and z is drawn from `[-speed_max, speed_max]`.
    pub speed_max: f64,
    pub ground_y: f64,
    pub background_depth: f64,
    pub exposure_s: f64,
    pub min_visible_fraction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            asset_count_min: 1,
            asset_count_max: 6,
            distractor_count_min: 0,
            distractor_count_max: 2,
            depth_min: 6.0,
            depth_max: 70.0,
            size_min: 1.5,
            size_max: 4.5,
            lateral_max: 14.0,
            speed_max: 0.0,
            ground_y: 1.6,
            background_depth: 120.0,
            exposure_s: 0.0,
            min_visible_fraction: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        macro_rules! take {
            ($($field:ident),*) => {
                $( if let Some(v) = kv.get_parsed(stringify!($field))? { c.$field = v; } )*
            };
        }
        take!(
            asset_count_min,
            asset_count_max,
            distractor_count_min,
            distractor_count_max,
            depth_min,
            depth_max,
            size_min,
            size_max,
            lateral_max,
            speed_max,
            ground_y,
            background_depth,
            exposure_s,
            min_visible_fraction
        );
        c.validate()?;
        Ok(c)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("asset_count_min", self.asset_count_min);
        kv.set("asset_count_max", self.asset_count_max);
        kv.set("distractor_count_min", self.distractor_count_min);
        kv.set("distractor_count_max", self.distractor_count_max);
        kv.set("depth_min", self.depth_min);
        kv.set("depth_max", self.depth_max);
        kv.set("size_min", self.size_min);
        kv.set("size_max", self.size_max);
        kv.set("lateral_max", self.lateral_max);
        kv.set("speed_max", self.speed_max);
        kv.set("ground_y", self.ground_y);
        kv.set("background_depth", self.background_depth);
        kv.set("exposure_s", self.exposure_s);
        kv.set("min_visible_fraction", self.min_visible_fraction);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.asset_count_min > self.asset_count_max {
            return Err(Error::invalid("asset_count_min", "exceeds asset_count_max"));
        }
        if self.distractor_count_min > self.distractor_count_max {
            return Err(Error::invalid(
                "distractor_count_min",
                "exceeds distractor_count_max",
            ));
        }
        if !(self.depth_min > 0.0 && self.depth_min <= self.depth_max) {
            return Err(Error::invalid(
                "depth_min",
                "need 0 < depth_min <= depth_max",
            ));
        }
        if !(self.size_min > 0.0 && self.size_min <= self.size_max) {
            return Err(Error::invalid("size_min", "need 0 < size_min <= size_max"));
        }
        if self.depth_max + self.size_max >= self.background_depth {
            return Err(Error::invalid(
                "background_depth",
                "must lie beyond depth_max + size_max",
            ));
        }
        if !(self.ground_y > 0.0) {
            return Err(Error::invalid("ground_y", "must be positive"));
        }
        if !(self.lateral_max >= 0.0 && self.speed_max >= 0.0 && self.exposure_s >= 0.0) {
            return Err(Error::invalid(
                "lateral_max",
                "lateral_max, speed_max and exposure_s must be >= 0",
            ));
        }
        if !(0.0..=1.0).contains(&self.min_visible_fraction) {
            return Err(Error::invalid("min_visible_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Deterministic scene from `seed`; assets never overlap each other.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vehicles = rng.random_range(config.asset_count_min..=config.asset_count_max);
    let distractors = rng.random_range(config.distractor_count_min..=config.distractor_count_max);
    let classes = std::iter::repeat_n(AssetClass::Vehicle, vehicles)
        .chain(std::iter::repeat_n(AssetClass::Distractor, distractors));

    let mut assets: Vec<Asset> = Vec::with_capacity(vehicles + distractors);
    for (index, class) in classes.enumerate() {
        let aabb = (0..MAX_PLACEMENT_ATTEMPTS)
            .map(|_| sample_box(config, class, &mut rng))
            .find(|candidate| assets.iter().all(|a| !a.aabb.overlaps(candidate)))
            .ok_or(Error::Placement {
                asset_index: index,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            })?;
        let albedo = match class {
            AssetClass::Vehicle => [0; 3].map(|_| rng.random_range(0.05..0.95)),
            AssetClass::Distractor => [rng.random_range(0.2..0.6); 3],
        };
        let s = config.speed_max;
        let velocity = match class {
            AssetClass::Vehicle => {
                Point3::new(rng.random_range(-s..=s), 0.0, rng.random_range(-s..=s))
            }
            AssetClass::Distractor => Point3::default(),
        };
        assets.push(Asset {
            class,
            aabb,
            albedo,
            velocity,
        });
    }

    let scene = Scene {
        assets,
        ground_y: config.ground_y,
        background_depth: config.background_depth,
        rng_seed: seed,
    };
    scene.validate()?;
    Ok(scene)
}

fn sample_box(config: &SceneConfig, class: AssetClass, rng: &mut ChaCha8Rng) -> Aabb {
    let mut size = || rng.random_range(config.size_min..=config.size_max);
    let (width, height, length) = match class {
        AssetClass::Vehicle => (size(), size().min(2.5), size()),
        // posts and signs: narrow and tall
        AssetClass::Distractor => (0.3 * size(), size(), 0.3 * size()),
    };
    let near = rng.random_range(config.depth_min..=config.depth_max);
    let center_x = rng.random_range(-config.lateral_max..=config.lateral_max);
    Aabb {
        min: Point3::new(center_x - width / 2.0, config.ground_y - height, near),
        max: Point3::new(center_x + width / 2.0, config.ground_y, near + length),
    }
}
