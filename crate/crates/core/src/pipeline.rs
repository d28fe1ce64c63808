//! Full frame run: enhancement, depth post-processing, component maps,
//! suppression, fusion, localization, curiosity scoring and ranking.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::config::{hex, LocalizeMode, PipelineConfig, ReferenceConfig};
use crate::curiosity::{
    compute_region_features, known_value_provider, rank_regions, region_diagnostics, score_region,
    FeatureSources, ScoredRegion,
};
use crate::depthpp::{decode_depth, postprocess_depth, write_ard1, DepthMap};
use crate::enhance::enhance_pipeline;
use crate::error::{Error, Result};
use crate::features::{
    depth_components, difference_of_gaussians, fit_patch_pca_at, fit_patch_stats_at, gradient_magnitude,
    mahalanobis_raw, multiscale_laplacian, patch_origins, recon_error_raw, suppression_maps, ComponentId,
    ComponentMap, DescriptorSource, ReferenceModels,
};
use crate::fuse::{
    apply_suppression, consistency_reweight, hysteresis_threshold, label_regions, morphology_open_close,
    weighted_fusion, LabeledRegions, Mask,
};
use crate::filter::gaussian_blur;
use crate::io;
use crate::localize::{hypotheses_from_regions, merge_with_members, nms, edge_fragments};
use crate::overlay::{render_overlay, OverlaySidecar};
use crate::raster::{minmax_normalize, resize_bicubic, rgb_to_luma_sat, LumaSat, RasterF32};
use crate::report::{
    named, ComponentEntry, DepthStatus, ReferenceSource, ReferenceStatus, ReportRegion, RunReport,
    REPORT_SCHEMA_VERSION,
};

/// One input frame at its native resolution.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: RasterF32,
    pub depth: Option<DepthMap>,
    /// Optional per-pixel known-value prior in [0,1].
    pub known_value: Option<RasterF32>,
}

/// Content id of a frame: leading 16 hex digits of SHA-256 over the image
/// bytes followed by the depth bytes.
pub fn frame_id(image_bytes: &[u8], depth_bytes: Option<&[u8]>) -> String {
    let mut h = Sha256::new();
    h.update((image_bytes.len() as u64).to_le_bytes());
    h.update(image_bytes);
    if let Some(d) = depth_bytes {
        h.update((d.len() as u64).to_le_bytes());
        h.update(d);
    }
    hex(&h.finalize())[..16].to_string()
}

/// Decodes PNG image bytes and optional depth bytes (ARD1 or 16-bit PNG)
/// into a frame whose depth matches the working resolution.
pub fn decode_frame(image_bytes: &[u8], depth_bytes: Option<&[u8]>, cfg: &PipelineConfig) -> Result<Frame> {
    let image = io::decode_image(image_bytes)?;
    let depth = match depth_bytes {
        Some(b) => Some(decode_depth(b, Some(working_dims(image.dims(), cfg)), &cfg.depth.load)?),
        None => None,
    };
    Ok(Frame {
        image,
        depth,
        known_value: None,
    })
}

/// Resolution the pipeline works at for an input of size `dims`.
pub fn working_dims(dims: (usize, usize), cfg: &PipelineConfig) -> (usize, usize) {
    match (cfg.enhance.enabled_steps.resize, cfg.enhance.resize) {
        (true, Some([w, h])) => (w, h),
        _ => dims,
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// Enhanced frame at working resolution.
    pub working: RasterF32,
    /// Components as fused (after suppression).
    pub components: Vec<ComponentMap>,
    pub fused: RasterF32,
    pub mask: Mask,
    /// Depth after post-processing, when depth was supplied.
    pub depth: Option<DepthMap>,
    /// Ranked regions; `hypothesis.id` equals the rank.
    pub regions: Vec<ScoredRegion>,
}

impl RunOutput {
    pub fn component(&self, id: ComponentId) -> Option<&ComponentMap> {
        self.components.iter().find(|c| c.name == id)
    }

    pub fn overlay(&self) -> Result<(RasterF32, OverlaySidecar)> {
        let boxes: Vec<_> = self.regions.iter().map(|r| (r.hypothesis.id, r.hypothesis.bbox)).collect();
        render_overlay(&self.working, Some(&self.fused), &boxes)
    }

    /// Writes `report.json`, `fused.png`, `mask.png`, `overlay.png`,
    /// `overlay.json`, `depth.ard1` when depth was supplied, and optionally
    /// `component_<name>.png`.
    pub fn write_artifacts(&self, dir: &Path, write_components: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report.to_json())?;
        io::write_bytes(dir.join("fused.png"), &io::encode_png16(&self.fused)?)?;
        io::write_bytes(dir.join("mask.png"), &io::encode_mask(&self.mask)?)?;
        let (img, side) = self.overlay()?;
        io::write_bytes(dir.join("overlay.png"), &io::encode_png8(&img)?)?;
        let mut side_json = serde_json::to_string_pretty(&side)?;
        side_json.push('\n');
        std::fs::write(dir.join("overlay.json"), side_json)?;
        if let Some(d) = &self.depth {
            write_ard1(dir.join("depth.ard1"), &d.raster)?;
        }
        if write_components {
            for c in &self.components {
                io::write_bytes(dir.join(format!("component_{}.png", c.name)), &io::encode_png16(&c.map)?)?;
            }
        }
        Ok(())
    }
}

struct Timer {
    enabled: bool,
    last: Instant,
    spans: BTreeMap<String, f64>,
}

impl Timer {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            last: Instant::now(),
            spans: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        if self.enabled {
            let ms = (now - self.last).as_secs_f64() * 1e3;
            *self.spans.entry(stage.to_string()).or_insert(0.0) += (ms * 1e3).round() / 1e3;
        }
        self.last = now;
    }

    fn finish(self) -> Option<BTreeMap<String, f64>> {
        self.enabled.then_some(self.spans)
    }
}

fn luma_sat(img: &RasterF32, sigma: f64) -> Result<LumaSat> {
    let ls = if img.channels() == 3 {
        rgb_to_luma_sat(img)?
    } else {
        let (w, h) = img.dims();
        LumaSat {
            luminance: img.clamp01(),
            saturation: RasterF32::zeros(w, h),
        }
    };
    if sigma <= 0.0 {
        return Ok(ls);
    }
    Ok(LumaSat {
        luminance: gaussian_blur(&ls.luminance, sigma),
        saturation: gaussian_blur(&ls.saturation, sigma),
    })
}

fn weight_of(cfg: &PipelineConfig, id: ComponentId) -> f64 {
    cfg.fusion.weights.get(&id).copied().unwrap_or(0.0)
}

/// Patch means of `map` via a summed-area table.
fn patch_means(map: &RasterF32, origins: &[(usize, usize)], size: usize) -> Vec<f64> {
    let (w, h) = map.dims();
    let mut sat = vec![0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += map.get(x, y) as f64;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let at = |x: usize, y: usize| sat[y * (w + 1) + x];
    origins
        .iter()
        .map(|&(x, y)| {
            (at(x + size, y + size) - at(x, y + size) - at(x + size, y) + at(x, y)) / (size * size) as f64
        })
        .collect()
}

/// Models fitted on the quietest patches of the frame under a first-pass
/// fusion of the local cues.
fn fit_auto_reference(
    src: &DescriptorSource,
    local: &[ComponentMap],
    cfg: &PipelineConfig,
    fraction: f64,
) -> Result<(ReferenceModels, usize)> {
    let f = &cfg.features;
    let mut weights = BTreeMap::new();
    for c in local {
        weights.insert(c.name, weight_of(cfg, c.name).max(1e-9));
    }
    let first = weighted_fusion(local, &weights)?;
    let (w, h) = first.dims();
    let origins = patch_origins(w, h, &f.patch)?;
    let scores = patch_means(&first, &origins, f.patch.size);
    let mut order: Vec<usize> = (0..origins.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let min_needed = (f.patch.pixel_dim() + 2).max(f.patch.descriptor_dim() + 2);
    let take = ((origins.len() as f64 * fraction).ceil() as usize)
        .max(min_needed)
        .min(origins.len());
    let mut chosen: Vec<(usize, usize)> = order[..take].iter().map(|&i| origins[i]).collect();
    chosen.sort_unstable();
    let patch_stats = fit_patch_stats_at(src, &chosen, &f.patch, f.ridge_scale)?;
    let pca = fit_patch_pca_at(src, &chosen, &f.patch, f.pca_components.min(take - 1).max(1))?;
    Ok((ReferenceModels { patch_stats, pca }, take))
}

/// Runs the whole pipeline on one frame.
///
/// `reference` overrides the configured reference source.
pub fn run_pipeline(
    frame: &Frame,
    cfg: &PipelineConfig,
    frame_id: &str,
    reference: Option<&ReferenceModels>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut timer = Timer::new(cfg.io.timings);
    let mut warnings = Vec::new();

    let working = enhance_pipeline(&frame.image, &cfg.enhance)?;
    // suppression statistics come from the frame before local contrast remapping
    let photometric = match (cfg.enhance.enabled_steps.resize, cfg.enhance.resize) {
        (true, Some([rw, rh])) => resize_bicubic(&frame.image, rw, rh)?,
        _ => frame.image.clone(),
    };
    let gray = working.to_gray();
    let (w, h) = gray.dims();
    timer.lap("enhance");

    let gradient = gradient_magnitude(&gray)?;
    let mut depth_status = DepthStatus {
        present: frame.depth.is_some(),
        fallback: frame.depth.is_none(),
        unit: frame.depth.as_ref().map(|d| d.unit),
        postprocessed: false,
        poisson_converged: None,
        poisson_iterations: None,
    };
    let depth = match &frame.depth {
        Some(d) => {
            if d.dims() != (w, h) {
                return Err(Error::DimensionMismatch {
                    expected: (w, h),
                    got: d.dims(),
                });
            }
            if cfg.ablation.depth_postprocess {
                let r = postprocess_depth(d, &gradient.map, &gray, &cfg.depth.postprocess)?;
                depth_status.postprocessed = true;
                depth_status.poisson_converged = Some(r.converged);
                depth_status.poisson_iterations = Some(r.poisson_iterations);
                if !r.converged {
                    warnings.push("depth smoothing hit its iteration cap before converging".to_string());
                }
                Some(r.depth)
            } else {
                Some(d.clone())
            }
        }
        None => {
            warnings.push("no depth supplied: depth cues and depth features disabled".to_string());
            None
        }
    };
    timer.lap("depth");

    let f = &cfg.features;
    let mut local = vec![
        gradient,
        multiscale_laplacian(&gray, &f.laplacian_scales)?,
        difference_of_gaussians(&gray, f.dog_sigmas[0], f.dog_sigmas[1])?,
    ];
    let sup_active = cfg.ablation.suppression && cfg.fusion.suppression.enabled && cfg.fusion.suppression.strength > 0.0;
    let sup = if sup_active {
        Some(suppression_maps(&luma_sat(&photometric, cfg.fusion.suppression.illumination_sigma)?)?)
    } else {
        None
    };
    if let Some(s) = &sup {
        local = apply_suppression(&local, s, &cfg.fusion.suppression)?;
    }
    timer.lap("local_cues");

    let src = DescriptorSource::new(&gray)?;
    let mut components = local.clone();
    let mut recon_err = RasterF32::zeros(w, h);
    let reference_status = if cfg.ablation.advanced_signals {
        let (models, status) = match (reference, &f.reference) {
            (Some(m), _) => (m.clone(), ReferenceStatus { source: ReferenceSource::Model, patches: 0 }),
            (None, ReferenceConfig::Model { path }) => {
                let bytes = std::fs::read(path)?;
                (
                    ReferenceModels::from_bytes(&bytes)?,
                    ReferenceStatus { source: ReferenceSource::Model, patches: 0 },
                )
            }
            (None, ReferenceConfig::Auto { fraction }) => {
                let (m, n) = fit_auto_reference(&src, &local, cfg, *fraction)?;
                (m, ReferenceStatus { source: ReferenceSource::Auto, patches: n })
            }
        };
        timer.lap("reference_fit");
        let mahal = mahalanobis_raw(&src, &models.patch_stats)?;
        recon_err = recon_error_raw(&src, &models.pca)?;
        let mut advanced = vec![
            ComponentMap::from_raw(ComponentId::Recon, &recon_err)?,
            ComponentMap::from_raw(ComponentId::PatchStats, &mahal)?,
        ];
        if let Some(s) = &sup {
            advanced = apply_suppression(&advanced, s, &cfg.fusion.suppression)?;
        }
        components.extend(advanced);
        timer.lap("patch_models");
        status
    } else {
        ReferenceStatus {
            source: ReferenceSource::Disabled,
            patches: 0,
        }
    };
    if let (Some(d), true) = (&depth, cfg.ablation.depth_cues) {
        components.extend(depth_components(d)?);
    }
    components.retain(|c| weight_of(cfg, c.name) > 0.0);
    components.sort_by_key(|c| c.name);
    if components.is_empty() {
        return Err(Error::Config("every available component has zero weight".into()));
    }
    let fused = minmax_normalize(&weighted_fusion(&components, &cfg.fusion.weights)?)?;
    let total: f64 = components.iter().map(|c| weight_of(cfg, c.name)).sum();
    timer.lap("fusion");

    let hy = &cfg.fusion.hysteresis;
    let (mask, regions): (Mask, LabeledRegions) = match cfg.localize.mode {
        LocalizeMode::Regions => {
            let raw = hysteresis_threshold(&fused, hy.tau_low, hy.tau_high)?;
            let mask = morphology_open_close(&raw, &cfg.fusion.morphology);
            let regions = label_regions(&mask, cfg.fusion.min_region_area);
            (mask, regions)
        }
        LocalizeMode::Edges => {
            let regions = edge_fragments(&fused, hy.tau_low, hy.tau_high, cfg.localize.edge_min_length)?;
            let mask = Mask {
                width: w,
                height: h,
                data: regions.label_map.iter().map(|&l| l > 0).collect(),
            };
            (mask, regions)
        }
    };
    let depth_grad = components.iter().find(|c| c.name == ComponentId::DepthGrad).map(|c| &c.map);
    let confidence = consistency_reweight(&regions, &fused, &components, depth_grad);
    let scores: Vec<f64> = confidence.iter().map(|c| c.confidence).collect();
    let hyps = hypotheses_from_regions(&regions, &scores)?;
    let kept = nms(&hyps, cfg.localize.iou_threshold);
    let diag = ((w * w + h * h) as f64).sqrt();
    let merged = merge_with_members(&kept, cfg.localize.merge_distance * diag);
    timer.lap("localize");

    let sources = FeatureSources::new(recon_err, fused.clone(), depth.clone())?;
    let model = &cfg.curiosity.model;
    let mut scored = Vec::with_capacity(merged.len());
    for (hyp, members) in merged {
        let mut pixels: Vec<usize> = members
            .iter()
            .flat_map(|&m| regions.regions[kept[m].label as usize - 1].iter().copied())
            .collect();
        pixels.sort_unstable();
        let s_known = known_value_provider(&pixels, &cfg.curiosity.known_value, frame.known_value.as_ref())?;
        let features = compute_region_features(&pixels, s_known, &sources)?;
        let diagnostics = region_diagnostics(&pixels, &components);
        scored.push((score_region(hyp, features, diagnostics, model), pixels.len()));
    }
    let areas: BTreeMap<u32, usize> = scored.iter().map(|(s, n)| (s.hypothesis.id, *n)).collect();
    let mut ranked = rank_regions(scored.into_iter().map(|(s, _)| s).collect());
    let mut report_regions = Vec::with_capacity(ranked.len());
    for (rank, r) in ranked.iter_mut().enumerate() {
        let area_px = areas[&r.hypothesis.id];
        r.hypothesis.id = rank as u32 + 1;
        let b = &r.hypothesis.bbox;
        let a = &r.hypothesis.aabb;
        let contrib: Vec<f64> = r.normalized.iter().zip(&model.alpha).map(|(x, a)| x * a).collect();
        report_regions.push(ReportRegion {
            id: r.hypothesis.id,
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
            angle_deg: b.angle_deg,
            score: r.hypothesis.score,
            aabb: [a.x0, a.y0, a.x1, a.y1],
            area_px,
            curiosity: r.curiosity,
            uncertainty: r.uncertainty,
            features: r.features.clone(),
            normalized: named(&r.normalized),
            contributions: named(&contrib),
            diagnostics: r.diagnostics.clone(),
        });
    }
    if report_regions.is_empty() {
        warnings.push("no candidate regions above the detection thresholds".to_string());
    }
    timer.lap("curiosity");

    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        frame_id: frame_id.to_string(),
        config_hash: cfg.hash(),
        width: w,
        height: h,
        depth: depth_status,
        reference: reference_status,
        components: components
            .iter()
            .map(|c| ComponentEntry {
                name: c.name,
                raw_range: [c.raw_range.0 as f64, c.raw_range.1 as f64],
                weight: weight_of(cfg, c.name) / total,
                suppressed: sup.is_some() && c.name.is_image_cue(),
            })
            .collect(),
        ranking: report_regions.iter().map(|r| r.id).collect(),
        regions: report_regions,
        warnings,
        timings_ms: timer.finish(),
    };
    Ok(RunOutput {
        report,
        working,
        components,
        fused,
        mask,
        depth,
        regions: ranked,
    })
}
