//! Whole-pipeline configuration, its validation and its content hash.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curiosity::{CuriosityModel, KnownValueConfig};
use crate::depthpp::{DepthLoadOptions, DepthPostParams};
use crate::enhance::EnhanceParams;
use crate::error::{Error, Result};
use crate::features::{PatchRecipe, DEFAULT_RIDGE_SCALE};
use crate::fuse::FusionConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    pub load: DepthLoadOptions,
    pub postprocess: DepthPostParams,
}

/// Where the patch-statistics and PCA reference models come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// Fit on the least anomalous fraction of patches of the frame itself,
    /// ranked by a first-pass fusion of the local cues.
    Auto { fraction: f64 },
    /// Load an `APM1` model file.
    Model { path: String },
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig::Auto { fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// LoG sigmas for the multiscale Laplacian cue.
    pub laplacian_scales: Vec<f64>,
    /// DoG (sigma1, sigma2), sigma1 < sigma2.
    pub dog_sigmas: [f64; 2],
    pub patch: PatchRecipe,
    pub ridge_scale: f64,
    pub pca_components: usize,
    pub reference: ReferenceConfig,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            laplacian_scales: vec![1.0, 2.0, 4.0],
            dog_sigmas: [1.0, 3.0],
            patch: PatchRecipe::default(),
            ridge_scale: DEFAULT_RIDGE_SCALE,
            pca_components: 8,
            reference: ReferenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum LocalizeMode {
    /// Boxes around labeled hysteresis regions.
    Regions,
    /// Boxes around Canny edge fragments of the fused map.
    Edges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub mode: LocalizeMode,
    pub iou_threshold: f64,
    /// Center distance for merging, as a fraction of the frame diagonal.
    pub merge_distance: f64,
    /// Minimum edge-fragment length in pixels (edges mode).
    pub edge_min_length: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            mode: LocalizeMode::Regions,
            iou_threshold: 0.3,
            merge_distance: 0.02,
            edge_min_length: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CuriosityConfig {
    pub model: CuriosityModel,
    pub known_value: KnownValueConfig,
}

/// Switches that remove whole stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub depth_postprocess: bool,
    pub suppression: bool,
    /// Patch statistics and PCA reconstruction cues.
    pub advanced_signals: bool,
    pub depth_cues: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            depth_postprocess: true,
            suppression: true,
            advanced_signals: true,
            depth_cues: true,
        }
    }
}

/// Output options; not part of the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Write every component map as a PNG next to the report.
    pub write_components: bool,
    /// Record per-stage timings in the report.
    pub timings: bool,
    /// Upload size limit for the service, in bytes.
    pub max_upload_bytes: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            write_components: false,
            timings: true,
            max_upload_bytes: 32 << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub enhance: EnhanceParams,
    pub depth: DepthConfig,
    pub features: FeaturesConfig,
    pub fusion: FusionConfig,
    pub localize: LocalizeConfig,
    pub curiosity: CuriosityConfig,
    pub ablation: AblationConfig,
    pub io: IoConfig,
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_inner().map_err(config_err)
    }

    fn validate_inner(&self) -> Result<()> {
        self.enhance.validate()?;
        self.depth.postprocess.validate()?;
        if !(self.depth.load.png_scale.is_finite() && self.depth.load.png_scale > 0.0) {
            return Err(Error::Config("depth.load.png_scale must be positive".into()));
        }
        let f = &self.features;
        if f.laplacian_scales.is_empty() || f.laplacian_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("features.laplacian_scales must be non-empty and positive".into()));
        }
        let [s1, s2] = f.dog_sigmas;
        if !(s1 > 0.0 && s1 < s2 && s2.is_finite()) {
            return Err(Error::Config("features.dog_sigmas must satisfy 0 < sigma1 < sigma2".into()));
        }
        f.patch.validate()?;
        if !(f.ridge_scale.is_finite() && f.ridge_scale >= 0.0) {
            return Err(Error::Config("features.ridge_scale must be >= 0".into()));
        }
        if f.pca_components == 0 || f.pca_components > f.patch.pixel_dim() {
            return Err(Error::Config(format!(
                "features.pca_components must lie in 1..={}",
                f.patch.pixel_dim()
            )));
        }
        if let ReferenceConfig::Auto { fraction } = f.reference {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config("features.reference.fraction must lie in (0,1]".into()));
            }
        }
        self.fusion.validate()?;
        let l = &self.localize;
        if !(0.0..=1.0).contains(&l.iou_threshold) {
            return Err(Error::Config("localize.iou_threshold must lie in [0,1]".into()));
        }
        if !(l.merge_distance.is_finite() && l.merge_distance >= 0.0) {
            return Err(Error::Config("localize.merge_distance must be >= 0".into()));
        }
        self.curiosity.model.validate()?;
        if let KnownValueConfig::Constant { value } = self.curiosity.known_value {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config("curiosity.known_value.value must lie in [0,1]".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every semantic section (`io` excluded).
    pub fn hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.io = IoConfig::default();
        let bytes = serde_json::to_vec(&semantic).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    pub fn json_schema() -> String {
        let schema = schemars::schema_for!(PipelineConfig);
        serde_json::to_string_pretty(&schema).expect("schema serializes")
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
