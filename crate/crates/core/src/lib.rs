//! Camera and LiDAR data preparation for vehicle detection.
//!
//! The crate renders synthetic scenes into radiance images, dense depth maps and
//! 2D labels ([`scene`]), degrades depth to LiDAR-like angular sampling ([`lidar`]),
//! fuses camera red/green with quantized depth into RGD images ([`fusion`]) and
//! scores detections with AP at an IoU threshold ([`metrics`]). [`dataset`] holds
//! the file formats and [`pipeline`] the dataset-level commands built on top.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod lidar;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod scene;

pub use error::{
    Error, ErrorClass, FormatError, FormatErrorKind, RecordError, RecordErrorKind, Result,
};
pub use fusion::{FillMode, MaskedPlane, Plane8, RadianceImage, RgdImage, RgdMetadata};
pub use geometry::{CameraIntrinsics, DepthMap, Point3, PointCloud, Projection};
pub use lidar::{DensityReport, PatternPresets, SamplingPattern, SparseDepth};
pub use metrics::{
    ApInterpolation, Box2D, Detection, DetectionSet, EvalResult, GroundTruth, GroundTruthSet,
};
pub use scene::{Asset, AssetClass, Scene, SceneConfig};
