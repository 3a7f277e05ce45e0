//! Run configuration: one strict JSON file drives generation, dataset
//! assembly and evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autolabel::{DEFAULT_MIN_PIXELS, WALNUT_CLASS_INDEX};
use crate::camera::Camera;
use crate::canopy::{CanopyError, OrchardParams, TessellationQuality};
use crate::dataset::SplitRatio;
use crate::eval::Interpolation;
use crate::geometry::Vec3;
use crate::render::ToneMap;
use crate::spectral::{BandSet, Lighting, MaterialLibrary};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config key {key}: {message}")]
    Parse { key: String, message: String },
    #[error("config {section}.{key}: {message}")]
    Invalid {
        section: &'static str,
        key: String,
        message: String,
    },
}

fn invalid(section: &'static str, key: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        section,
        key: key.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub orchard: OrchardParams,
    pub quality: TessellationQuality,
    pub materials: MaterialLibrary,
    pub bands: BandSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub width: u32,
    pub height: u32,
    /// Degrees.
    pub vertical_fov: f64,
    pub samples_per_pixel: u32,
    pub lighting: Lighting,
    pub tonemap: ToneMap,
    /// Mixed into every image's pixel-sampling seed.
    pub seed: u64,
    /// Fixed poses used in turn instead of sampled ones when non-empty.
    pub cameras: Vec<Camera>,
    pub ray_epsilon: f64,
    /// Also write float radiance (`img_NNNNN.f32` + JSON sidecar).
    pub write_raw: bool,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            width: 640,
            height: 640,
            vertical_fov: 60.0,
            samples_per_pixel: 2,
            lighting: Lighting::default(),
            tonemap: ToneMap::default(),
            seed: 0,
            cameras: Vec::new(),
            ray_epsilon: crate::scene::DEFAULT_RAY_EPSILON,
            write_raw: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    /// Instances with fewer visible pixels get no box.
    pub min_pixels: u32,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self {
            min_pixels: DEFAULT_MIN_PIXELS,
        }
    }
}

/// How many images to make and where the camera goes for each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationJob {
    pub count: u32,
    pub master_seed: u64,
    /// Center of the canopy region the camera looks at.
    pub roi_center: Vec3,
    /// Half-width of the cube the look-at point is jittered within (m).
    pub roi_jitter: f64,
    /// Camera distance from the look-at point, `[min, max]` in meters.
    pub distance: [f64; 2],
    /// Camera direction seen from the look-at point, degrees from +x toward +y.
    pub azimuth: [f64; 2],
    /// Camera elevation above the look-at point, degrees.
    pub elevation: [f64; 2],
    /// Regrow the orchard with a per-image seed.
    pub vary_scene: bool,
}

impl Default for GenerationJob {
    fn default() -> Self {
        Self {
            count: 500,
            master_seed: 2021,
            roi_center: Vec3::new(0.0, -1.2, 2.6),
            roi_jitter: 0.4,
            distance: [0.5, 2.0],
            azimuth: [-130.0, -50.0],
            elevation: [-15.0, 25.0],
            vary_scene: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub real_count: u32,
    pub synthetic_count: u32,
    pub ratio: SplitRatio,
    pub seed: u64,
    pub synthetic_train_only: bool,
    pub out_dir: PathBuf,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            real_count: 1500,
            synthetic_count: 500,
            ratio: SplitRatio::default(),
            seed: 0,
            synthetic_train_only: false,
            out_dir: PathBuf::from("dataset"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    pub class_id: u32,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            interpolation: Interpolation::Continuous,
            class_id: WALNUT_CLASS_INDEX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSection,
    pub render: RenderSection,
    pub label: LabelSection,
    pub generation: GenerationJob,
    pub dataset: DatasetSection,
    pub eval: EvalSection,
}

fn ordered(range: [f64; 2]) -> bool {
    range[0].is_finite() && range[1].is_finite() && range[0] <= range[1]
}

fn canopy_key(prefix: &str, e: CanopyError) -> ConfigError {
    match e {
        CanopyError::Invalid { field, reason } => invalid("scene", format!("{prefix}{field}"), reason),
        other => invalid("scene", prefix.trim_end_matches('.'), other),
    }
}

impl RunConfig {
    /// Parses JSON; unknown keys and type errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            ConfigError::Parse {
                key: if key == "." { "<root>".into() } else { key },
                message: e.into_inner().to_string(),
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config = Self::from_json(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scene;
        s.bands.validate().map_err(|e| invalid("scene", "bands", e))?;
        for name in ["R", "G", "B"] {
            s.bands
                .position(name)
                .map_err(|_| invalid("scene", "bands", format!("band {name:?} is required for RGB output")))?;
        }
        s.orchard.validate().map_err(|e| canopy_key("orchard.", e))?;
        s.quality.validate().map_err(|e| canopy_key("quality.", e))?;
        s.materials
            .validate(&s.bands)
            .map_err(|(name, e)| invalid("scene", format!("materials.{name}"), e))?;

        let r = &self.render;
        if r.width == 0 || r.height == 0 {
            return Err(invalid("render", "width/height", format!("{}x{} must be at least 1x1", r.width, r.height)));
        }
        if !(r.vertical_fov > 0.0 && r.vertical_fov < 180.0) {
            return Err(invalid("render", "vertical_fov", format!("{} must lie in (0, 180)", r.vertical_fov)));
        }
        if r.samples_per_pixel == 0 {
            return Err(invalid("render", "samples_per_pixel", "must be >= 1"));
        }
        r.lighting
            .validate(s.bands.len())
            .map_err(|e| invalid("render", "lighting", e))?;
        r.tonemap.validate().map_err(|e| invalid("render", "tonemap", e))?;
        if !(r.ray_epsilon >= 0.0 && r.ray_epsilon.is_finite()) {
            return Err(invalid("render", "ray_epsilon", format!("{} must be finite and >= 0", r.ray_epsilon)));
        }
        for (i, c) in r.cameras.iter().enumerate() {
            c.validate().map_err(|e| invalid("render", format!("cameras[{i}]"), e))?;
        }

        if self.label.min_pixels == 0 {
            return Err(invalid("label", "min_pixels", "must be >= 1"));
        }

        let g = &self.generation;
        if g.count == 0 {
            return Err(invalid("generation", "count", "must be >= 1"));
        }
        if !(ordered(g.distance) && g.distance[0] > 0.0) {
            return Err(invalid(
                "generation",
                "distance",
                format!("range ({}, {}) must be positive and ordered", g.distance[0], g.distance[1]),
            ));
        }
        if !ordered(g.azimuth) {
            return Err(invalid(
                "generation",
                "azimuth",
                format!("range ({}, {}) must be ordered", g.azimuth[0], g.azimuth[1]),
            ));
        }
        if !(ordered(g.elevation) && g.elevation[0] > -90.0 && g.elevation[1] < 90.0) {
            return Err(invalid(
                "generation",
                "elevation",
                format!("range ({}, {}) must be ordered within (-90, 90)", g.elevation[0], g.elevation[1]),
            ));
        }
        if !(g.roi_jitter >= 0.0 && g.roi_jitter.is_finite()) {
            return Err(invalid("generation", "roi_jitter", "must be finite and >= 0"));
        }
        if !g.roi_center.is_finite() {
            return Err(invalid("generation", "roi_center", "must be finite"));
        }

        if self.dataset.out_dir.as_os_str().is_empty() {
            return Err(invalid("dataset", "out_dir", "must not be empty"));
        }

        let iou = self.eval.iou_threshold;
        if !(iou > 0.0 && iou < 1.0) {
            return Err(invalid("eval", "iou_threshold", format!("{iou} must lie in (0, 1)")));
        }
        Ok(())
    }
}
