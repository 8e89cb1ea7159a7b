//! Dataset manifest: one JSON document describing a directory of per-image files.
//! Paths are relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::labels::LabelRecord;
use crate::error::{Error, Result};
use crate::fusion::FillMode;
use crate::geometry::CameraIntrinsics;
use crate::lidar::SamplingPattern;
use crate::metrics::{GroundTruth, GroundTruthSet};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radiance_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgd_path: Option<String>,
    #[serde(default)]
    pub labels: Vec<LabelRecord>,
}

impl ManifestEntry {
    pub fn ground_truth(&self) -> Result<Vec<GroundTruth>> {
        self.labels
            .iter()
            .map(|l| l.to_ground_truth(&self.image_id))
            .collect()
    }

    fn paths(&self) -> impl Iterator<Item = &String> {
        [&self.radiance_path, &self.depth_path, &self.rgd_path]
            .into_iter()
            .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub intrinsics: CameraIntrinsics,
    pub max_range: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<SamplingPattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill_mode: Option<FillMode>,
    /// Resolved configuration that produced this dataset.
    #[serde(default)]
    pub effective_config: BTreeMap<String, String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(intrinsics: CameraIntrinsics, max_range: f32) -> Self {
        Self {
            version: MANIFEST_VERSION,
            intrinsics,
            max_range,
            pattern_preset: None,
            pattern: None,
            fill_mode: None,
            effective_config: BTreeMap::new(),
            entries: Vec::new(),
        }
    }

    pub fn ground_truth(&self) -> Result<GroundTruthSet> {
        let mut boxes = Vec::new();
        for e in &self.entries {
            boxes.extend(e.ground_truth()?);
        }
        Ok(GroundTruthSet { boxes })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Manifest {
            entry: 0,
            message: format!("invalid manifest JSON: {e}"),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Manifest {
                entry: 0,
                message: format!("unsupported version {}", m.version),
            });
        }
        m.check_ids()?;
        Ok(m)
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.image_id.is_empty() {
                return Err(Error::Manifest {
                    entry: i,
                    message: "empty image_id".into(),
                });
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Manifest {
                    entry: i,
                    message: format!("duplicate image_id `{}`", e.image_id),
                });
            }
            for l in &e.labels {
                l.to_ground_truth(&e.image_id)
                    .map_err(|err| Error::Manifest {
                        entry: i,
                        message: err.to_string(),
                    })?;
            }
        }
        Ok(())
    }

    /// Checks that every referenced file exists below `root`.
    pub fn check_files(&self, root: &Path) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            for p in e.paths() {
                if !root.join(p).is_file() {
                    return Err(Error::Manifest {
                        entry: i,
                        message: format!("missing file `{p}`"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LoadedManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest = Self::from_json(&text)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.check_files(&root)?;
        Ok(LoadedManifest { root, manifest })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedManifest {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl LoadedManifest {
    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }
}

/// Accepts either a manifest file or a directory containing `manifest.json`.
pub fn manifest_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(MANIFEST_FILE)
    } else {
        input.to_path_buf()
    }
}
