//! Component fusion and binarization into labeled candidate regions.

use std::collections::{BTreeMap, VecDeque};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ComponentId, ComponentMap, SuppressionMaps};
use crate::raster::{minmax_normalize, RasterF32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionMode {
    /// Image cues scaled by `(1 - beta) + beta * A_shadow * A_specular`.
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SuppressionConfig {
    pub enabled: bool,
    pub mode: SuppressionMode,
    pub strength: f64,
    /// Gaussian sigma (pixels) applied to L and S before the affinity terms,
    /// so they follow regional illumination rather than texture. 0 = per pixel.
    pub illumination_sigma: f64,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            mode: SuppressionMode::Multiplicative,
            strength: 1.0,
            illumination_sigma: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct HysteresisConfig {
    pub tau_low: f64,
    pub tau_high: f64,
}

impl Default for HysteresisConfig {
    fn default() -> Self {
        Self {
            tau_low: 0.3,
            tau_high: 0.6,
        }
    }
}

impl HysteresisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_low)
            || !(0.0..=1.0).contains(&self.tau_high)
            || self.tau_low > self.tau_high
        {
            return Err(Error::param(format!(
                "thresholds must satisfy 0 <= tau_low <= tau_high <= 1 (got {}, {})",
                self.tau_low, self.tau_high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct MorphologyConfig {
    pub open_radius: usize,
    pub close_radius: usize,
}

impl Default for MorphologyConfig {
    fn default() -> Self {
        Self {
            open_radius: 1,
            close_radius: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub weights: BTreeMap<ComponentId, f64>,
    pub suppression: SuppressionConfig,
    pub hysteresis: HysteresisConfig,
    pub morphology: MorphologyConfig,
    pub min_region_area: usize,
}

pub fn default_weights() -> BTreeMap<ComponentId, f64> {
    ComponentId::ALL
        .into_iter()
        .map(|c| {
            let w = match c {
                ComponentId::PatchStats => 0.2,
                c if c.is_depth_cue() => 0.1,
                _ => 0.15,
            };
            (c, w)
        })
        .collect()
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            weights: default_weights(),
            suppression: SuppressionConfig::default(),
            hysteresis: HysteresisConfig::default(),
            morphology: MorphologyConfig::default(),
            min_region_area: 20,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::param("fusion weights must be finite and >= 0"));
        }
        if !(self.weights.values().sum::<f64>() > 0.0) {
            return Err(Error::param("fusion weights must have a positive sum"));
        }
        if !(0.0..=1.0).contains(&self.suppression.strength) {
            return Err(Error::param("suppression strength must lie in [0,1]"));
        }
        let sig = self.suppression.illumination_sigma;
        if !(sig.is_finite() && sig >= 0.0) {
            return Err(Error::param("suppression illumination_sigma must be >= 0"));
        }
        self.hysteresis.validate()
    }
}

/// `sum_i w_i A_i` with the weights of the provided components renormalized to 1.
pub fn weighted_fusion(
    components: &[ComponentMap],
    weights: &BTreeMap<ComponentId, f64>,
) -> Result<RasterF32> {
    let first = components
        .first()
        .ok_or_else(|| Error::input("no components to fuse"))?;
    let mut ws = Vec::with_capacity(components.len());
    for c in components {
        c.map.require_channels(1)?;
        c.map.require_same_dims(&first.map)?;
        let w = *weights
            .get(&c.name)
            .ok_or_else(|| Error::input(format!("no fusion weight for component '{}'", c.name)))?;
        ws.push(w);
    }
    // fixed id order so the result does not depend on input order
    let mut order: Vec<usize> = (0..components.len()).collect();
    order.sort_by_key(|&i| components[i].name);
    let total: f64 = order.iter().map(|&i| ws[i]).sum();
    if !(total > 0.0) {
        return Err(Error::param("weights of the provided components sum to zero"));
    }
    let mut acc = vec![0f64; first.map.len_pixels()];
    for i in order {
        let w = ws[i] / total;
        for (a, &v) in acc.iter_mut().zip(components[i].map.data()) {
            *a += w * v as f64;
        }
    }
    let (w, h) = first.map.dims();
    Ok(RasterF32::from_vec_unchecked(
        w,
        h,
        1,
        acc.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
    ))
}

/// Per-pixel suppression factor `1 - beta (1 - A_shadow A_specular)`.
pub fn suppression_factor(sup: &SuppressionMaps, beta: f64) -> RasterF32 {
    let data = sup
        .shadow
        .data()
        .iter()
        .zip(sup.specular.data())
        .map(|(&a, &b)| (1.0 - beta * (1.0 - a as f64 * b as f64)) as f32)
        .collect();
    RasterF32::from_vec_unchecked(sup.shadow.width(), sup.shadow.height(), 1, data)
}

/// Scales the image-cue components by the suppression factor and renormalizes
/// them. Depth and patch-statistics components pass through unchanged.
pub fn apply_suppression(
    components: &[ComponentMap],
    sup: &SuppressionMaps,
    cfg: &SuppressionConfig,
) -> Result<Vec<ComponentMap>> {
    if !cfg.enabled || cfg.strength == 0.0 {
        return Ok(components.to_vec());
    }
    let factor = suppression_factor(sup, cfg.strength);
    components
        .iter()
        .map(|c| {
            if !c.name.is_image_cue() {
                return Ok(c.clone());
            }
            c.map.require_same_dims(&factor)?;
            let data = c
                .map
                .data()
                .iter()
                .zip(factor.data())
                .map(|(a, f)| a * f)
                .collect();
            let scaled = RasterF32::from_vec_unchecked(c.map.width(), c.map.height(), 1, data);
            Ok(ComponentMap {
                name: c.name,
                map: minmax_normalize(&scaled)?,
                raw_range: c.raw_range,
            })
        })
        .collect()
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn neighbors8(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = ((i % self.width) as isize, (i / self.width) as isize);
        let (w, h) = (self.width as isize, self.height as isize);
        (-1..=1)
            .flat_map(move |dy| (-1..=1).map(move |dx| (dx, dy)))
            .filter(|&d| d != (0, 0))
            .filter_map(move |(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| (ny * w + nx) as usize)
            })
    }
}

pub fn hysteresis_threshold(map: &RasterF32, tau_low: f64, tau_high: f64) -> Result<Mask> {
    map.require_channels(1)?;
    HysteresisConfig { tau_low, tau_high }.validate()?;
    let (w, h) = map.dims();
    let d = map.data();
    let mut out = Mask::new(w, h);
    let mut queue = VecDeque::new();
    for (i, &v) in d.iter().enumerate() {
        if v as f64 >= tau_high {
            out.data[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let nbrs: Vec<usize> = out.neighbors8(i).collect();
        for n in nbrs {
            if !out.data[n] && d[n] as f64 >= tau_low {
                out.data[n] = true;
                queue.push_back(n);
            }
        }
    }
    Ok(out)
}

fn disk_offsets(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect()
}

/// Erosion (`all`) or dilation (`any`) over in-bounds disk neighbors.
fn morph(mask: &Mask, r: usize, erode: bool) -> Mask {
    if r == 0 {
        return mask.clone();
    }
    let offs = disk_offsets(r);
    let (w, h) = (mask.width as isize, mask.height as isize);
    Mask::from_fn(mask.width, mask.height, |x, y| {
        let mut it = offs.iter().filter_map(|&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| mask.get(nx as usize, ny as usize))
        });
        if erode {
            it.all(|b| b)
        } else {
            it.any(|b| b)
        }
    })
}

pub fn erode(mask: &Mask, r: usize) -> Mask {
    morph(mask, r, true)
}

pub fn dilate(mask: &Mask, r: usize) -> Mask {
    morph(mask, r, false)
}

/// Opening with `disk(open_radius)` followed by closing with `disk(close_radius)`.
pub fn morphology_open_close(mask: &Mask, cfg: &MorphologyConfig) -> Mask {
    let opened = dilate(&erode(mask, cfg.open_radius), cfg.open_radius);
    erode(&dilate(&opened, cfg.close_radius), cfg.close_radius)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRegions {
    pub width: usize,
    pub height: usize,
    /// 0 is background; labels run 1..=regions.len().
    pub label_map: Vec<u32>,
    /// Sorted pixel indices of region `label - 1`.
    pub regions: Vec<Vec<usize>>,
}

impl LabeledRegions {
    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn points(&self, label_index: usize) -> Vec<(f64, f64)> {
        self.regions[label_index]
            .iter()
            .map(|&i| ((i % self.width) as f64, (i / self.width) as f64))
            .collect()
    }
}

/// 8-connected components, dropping those below `min_area`; labels ordered by
/// descending area, ties by first pixel in raster order.
pub fn label_regions(mask: &Mask, min_area: usize) -> LabeledRegions {
    let n = mask.data.len();
    let mut seen = vec![false; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for nb in mask.neighbors8(i) {
                if mask.data[nb] && !seen[nb] {
                    seen[nb] = true;
                    comp.push(nb);
                    queue.push_back(nb);
                }
            }
        }
        if comp.len() >= min_area.max(1) {
            comp.sort_unstable();
            comps.push(comp);
        }
    }
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    let mut label_map = vec![0u32; n];
    for (li, comp) in comps.iter().enumerate() {
        for &i in comp {
            label_map[i] = li as u32 + 1;
        }
    }
    LabeledRegions {
        width: mask.width,
        height: mask.height,
        label_map,
        regions: comps,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionConfidence {
    pub base: f64,
    pub dispersion: f64,
    pub alignment: f64,
    pub confidence: f64,
}

fn region_mean(map: &RasterF32, pixels: &[usize]) -> f64 {
    let d = map.data();
    pixels.iter().map(|&i| d[i] as f64).sum::<f64>() / pixels.len() as f64
}

/// `confidence = base * (1 - dispersion) * alignment` where `base` is the mean
/// fused score, `dispersion` the population std of per-component region means,
/// and `alignment` the mean normalized depth gradient (1 without depth).
pub fn consistency_reweight(
    regions: &LabeledRegions,
    fused: &RasterF32,
    components: &[ComponentMap],
    depth_grad: Option<&RasterF32>,
) -> Vec<RegionConfidence> {
    regions
        .regions
        .iter()
        .map(|px| {
            let base = region_mean(fused, px).clamp(0.0, 1.0);
            let means: Vec<f64> = components.iter().map(|c| region_mean(&c.map, px)).collect();
            let dispersion = if means.is_empty() {
                0.0
            } else {
                let m = means.iter().sum::<f64>() / means.len() as f64;
                (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / means.len() as f64)
                    .sqrt()
                    .clamp(0.0, 1.0)
            };
            let alignment = depth_grad.map_or(1.0, |g| region_mean(g, px).clamp(0.0, 1.0));
            RegionConfidence {
                base,
                dispersion,
                alignment,
                confidence: base * (1.0 - dispersion) * alignment,
            }
        })
        .collect()
}
