//! Plain-text `key=value` configuration shared by camera intrinsics and the
//! pipeline thresholds. Unknown keys are rejected. Values from later sources
//! override earlier ones (defaults < dataset config < user config < flags).

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{CameraModel, GeometryError};
use crate::segmentation::SimilarityWeights;
use crate::tracking::TrackingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: expected key=value")]
    Malformed(usize),
    #[error("line {0}: unknown key '{1}'")]
    UnknownKey(usize, String),
    #[error("line {0}: bad value for '{1}': {2}")]
    BadValue(usize, String, String),
    #[error("missing camera key '{0}'")]
    MissingCameraKey(&'static str),
    #[error(transparent)]
    Camera(#[from] GeometryError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

const KEYS: &[&str] = &[
    "fx",
    "fy",
    "cx",
    "cy",
    "depth_factor",
    "image_scale",
    "width",
    "height",
    "match_dist_3d",
    "moving_fraction",
    "huber_delta",
    "max_iterations",
    "convergence_tol",
    "pixel_match_radius",
    "w1",
    "w2",
    "match_threshold",
    "keyframe_interval",
    "merge_radius",
    "drop_rate",
    "dilate_rate",
    "corruption_seed",
];

/// A parsed config fragment: only the keys the file actually set.
#[derive(Clone, Debug, Default)]
pub struct ConfigFragment {
    values: BTreeMap<String, f64>,
}

impl ConfigFragment {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Malformed(lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey(lineno + 1, key.to_string()));
            }
            let parsed: f64 = value.parse().map_err(|e: std::num::ParseFloatError| {
                ConfigError::BadValue(lineno + 1, key.to_string(), e.to_string())
            })?;
            values.insert(key.to_string(), parsed);
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: f64) {
        debug_assert!(KEYS.contains(&key), "unknown config key {key}");
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    /// Overlays `other` on top of this fragment.
    pub fn merged_with(mut self, other: &ConfigFragment) -> Self {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), *v);
        }
        self
    }

    /// Builds the camera model; all eight intrinsics keys must be present.
    pub fn camera(&self) -> Result<CameraModel, ConfigError> {
        let need = |key: &'static str| {
            self.get(key)
                .ok_or(ConfigError::MissingCameraKey(key))
        };
        Ok(CameraModel::new(
            need("fx")?,
            need("fy")?,
            need("cx")?,
            need("cy")?,
            need("depth_factor")?,
            self.get("image_scale").unwrap_or(1.0),
            need("width")? as u32,
            need("height")? as u32,
        )?)
    }

    /// Tracking thresholds over the defaults.
    pub fn tracking(&self) -> Result<TrackingConfig, ConfigError> {
        let mut cfg = TrackingConfig::default();
        if let Some(v) = self.get("match_dist_3d") {
            cfg.match_dist_3d = v;
        }
        if let Some(v) = self.get("moving_fraction") {
            cfg.moving_fraction = v;
        }
        if let Some(v) = self.get("huber_delta") {
            cfg.huber_delta = v;
        }
        if let Some(v) = self.get("max_iterations") {
            cfg.max_iterations = v as usize;
        }
        if let Some(v) = self.get("convergence_tol") {
            cfg.convergence_tol = v;
        }
        if let Some(v) = self.get("pixel_match_radius") {
            cfg.pixel_match_radius = v;
        }
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Similarity weights over the defaults.
    pub fn weights(&self) -> Result<SimilarityWeights, ConfigError> {
        let d = SimilarityWeights::default();
        SimilarityWeights::new(
            self.get("w1").unwrap_or(d.w1),
            self.get("w2").unwrap_or(d.w2),
            self.get("match_threshold").unwrap_or(d.match_threshold),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn keyframe_interval(&self) -> Result<usize, ConfigError> {
        match self.get("keyframe_interval") {
            None => Ok(5),
            Some(v) if v >= 1.0 => Ok(v as usize),
            Some(v) => Err(ConfigError::Invalid(format!(
                "keyframe_interval must be >= 1, got {v}"
            ))),
        }
    }

    pub fn merge_radius(&self) -> Result<f64, ConfigError> {
        match self.get("merge_radius") {
            None => Ok(crate::mapping::DEFAULT_MERGE_RADIUS),
            Some(v) if v > 0.0 => Ok(v),
            Some(v) => Err(ConfigError::Invalid(format!(
                "merge_radius must be positive, got {v}"
            ))),
        }
    }

    /// Serializes the camera intrinsics block for a dataset directory.
    pub fn camera_file_text(cam: &CameraModel) -> String {
        format!(
            "# camera intrinsics\nfx={}\nfy={}\ncx={}\ncy={}\ndepth_factor={}\nimage_scale={}\nwidth={}\nheight={}\n",
            cam.fx, cam.fy, cam.cx, cam.cy, cam.depth_factor, cam.image_scale, cam.width, cam.height
        )
    }
}
