//! On-disk formats: DMAP depth maps, CSV point clouds, NDJSON labels and detections,
//! PNG images, the JSON dataset manifest, and real-world frame preprocessing.
//! Multi-byte binary fields are little-endian.

pub mod cloud;
pub mod dmap;
pub mod labels;
pub mod manifest;
pub mod png;
pub mod waymo;

pub use cloud::{decode_point_cloud, encode_point_cloud, read_point_cloud, write_point_cloud};
pub use dmap::{decode_depth_map, encode_depth_map, read_depth_map, write_depth_map};
pub use labels::{
    decode_detections, decode_labels, encode_detections, encode_labels, read_detections,
    read_labels, write_detections, write_labels, LabelRecord,
};
pub use manifest::{manifest_path, DatasetManifest, LoadedManifest, ManifestEntry, MANIFEST_FILE};
pub use png::{
    read_radiance_png, read_rgd_png, write_plane_png, write_radiance_png, write_rgd_png,
};
pub use waymo::{waymo_preprocess, waymo_preprocess_with, WaymoFrame, WaymoOptions};
