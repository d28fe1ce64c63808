//! Serialized run report. Region ids equal ranking positions and the overlay numbering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::curiosity::{RegionFeatures, FEATURE_NAMES};
use crate::depthpp::DepthUnit;
use crate::features::ComponentId;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEntry {
    pub name: ComponentId,
    /// Range before [0,1] normalization.
    pub raw_range: [f64; 2],
    /// Weight after renormalization over the fused components.
    pub weight: f64,
    pub suppressed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthStatus {
    pub present: bool,
    /// Depth cues and depth features were skipped because no depth was supplied.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit: Option<DepthUnit>,
    pub postprocessed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poisson_converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poisson_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    Auto,
    Model,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStatus {
    pub source: ReferenceSource,
    /// Patches the frame-fitted models were trained on (0 for loaded models).
    pub patches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRegion {
    pub id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub angle_deg: f64,
    /// Consistency-weighted detection confidence used for suppression and merging.
    pub score: f64,
    pub aabb: [f64; 4],
    pub area_px: usize,
    pub curiosity: f64,
    pub uncertainty: f64,
    pub features: RegionFeatures,
    pub normalized: BTreeMap<String, f64>,
    /// `alpha_k * x_k` per feature; sums to `curiosity`.
    pub contributions: BTreeMap<String, f64>,
    /// Mean of each fused component inside the region.
    pub diagnostics: BTreeMap<ComponentId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub frame_id: String,
    pub config_hash: String,
    pub width: usize,
    pub height: usize,
    pub depth: DepthStatus,
    pub reference: ReferenceStatus,
    pub components: Vec<ComponentEntry>,
    pub regions: Vec<ReportRegion>,
    pub ranking: Vec<u32>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn without_timings(&self) -> Self {
        Self {
            timings_ms: None,
            ..self.clone()
        }
    }
}

pub(crate) fn named(values: &[f64]) -> BTreeMap<String, f64> {
    FEATURE_NAMES
        .iter()
        .zip(values)
        .map(|(n, v)| (n.to_string(), *v))
        .collect()
}
