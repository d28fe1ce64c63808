//! Deterministic synthetic terrain scenes with ground-truth anomaly, shadow and
//! specular masks, true and observed depth, and graded target regions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depthpp::{write_ard1, DepthMap, DepthUnit};
use crate::error::{Error, Result};
use crate::fuse::Mask;
use crate::io;
use crate::localize::{min_area_rect, RotatedBox};
use crate::raster::RasterF32;
use crate::rng::Lcg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Rock,
    BrightRock,
    ShadowPatch,
    SpecularSpot,
    Ripple,
}

impl AnomalyKind {
    /// Targets are scored against the anomaly mask; shadows and glare are distractors.
    pub fn is_target(self) -> bool {
        matches!(self, AnomalyKind::Rock | AnomalyKind::BrightRock | AnomalyKind::Ripple)
    }

    pub fn relevance(self) -> f64 {
        match self {
            AnomalyKind::BrightRock => 3.0,
            AnomalyKind::Rock => 2.0,
            AnomalyKind::Ripple => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub count: usize,
    /// Diameter range in pixels.
    pub size: [f64; 2],
    pub contrast: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainSpec {
    pub octaves: usize,
    pub amplitude: f64,
    pub base_level: f64,
    /// Coarsest lattice spacing in pixels.
    pub cell: usize,
    pub tint: [f64; 3],
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self {
            octaves: 4,
            amplitude: 0.12,
            base_level: 0.5,
            cell: 64,
            tint: [1.0, 0.72, 0.52],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSpec {
    pub base: f64,
    /// Depth increase per pixel along x and y.
    pub slope: [f64; 2],
    /// Rock height relative to the largest rock size.
    pub bump_amplitude: f64,
    pub terrain_relief: f64,
    /// Std of additive noise on the observed depth.
    pub noise: f64,
}

impl Default for DepthSpec {
    fn default() -> Self {
        Self {
            base: 6.0,
            slope: [0.0, 0.004],
            bump_amplitude: 0.4,
            terrain_relief: 0.03,
            noise: 0.003,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub terrain: TerrainSpec,
    pub anomalies: Vec<AnomalySpec>,
    #[serde(default)]
    pub depth: DepthSpec,
}

impl SceneSpec {
    /// Mixed scene: rocks, bright rocks and ripples among a few shadows and glints.
    pub fn standard(seed: u64, width: usize, height: usize) -> Self {
        let a = |kind, count, size: [f64; 2], contrast: [f64; 2]| AnomalySpec { kind, count, size, contrast };
        Self {
            seed,
            width,
            height,
            terrain: TerrainSpec::default(),
            anomalies: vec![
                a(AnomalyKind::Rock, 5, [14.0, 36.0], [0.02, 0.06]),
                a(AnomalyKind::BrightRock, 2, [12.0, 28.0], [0.05, 0.1]),
                a(AnomalyKind::Ripple, 1, [30.0, 50.0], [0.05, 0.09]),
                a(AnomalyKind::ShadowPatch, 2, [24.0, 48.0], [0.45, 0.6]),
                a(AnomalyKind::SpecularSpot, 1, [8.0, 14.0], [0.5, 0.7]),
            ],
            depth: DepthSpec::default(),
        }
    }

    /// Few targets among many large shadow patches.
    pub fn shadow_dense(seed: u64, width: usize, height: usize) -> Self {
        let mut s = Self::standard(seed, width, height);
        for a in &mut s.anomalies {
            match a.kind {
                AnomalyKind::ShadowPatch => {
                    a.count = 8;
                    a.size = [30.0, 60.0];
                }
                AnomalyKind::SpecularSpot => a.count = 2,
                AnomalyKind::Rock => a.count = 4,
                _ => {}
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::param("scene must be at least 16x16"));
        }
        if self.terrain.octaves == 0 || self.terrain.cell < 2 {
            return Err(Error::param("terrain needs >= 1 octave and cell >= 2"));
        }
        if !(self.depth.base > 0.0) {
            return Err(Error::param("depth base must be positive"));
        }
        for a in &self.anomalies {
            if !(a.size[0] >= 2.0 && a.size[0] <= a.size[1]) {
                return Err(Error::param(format!("{:?}: sizes must satisfy 2 <= min <= max", a.kind)));
            }
            if !(a.contrast[0] >= 0.0 && a.contrast[0] <= a.contrast[1] && a.contrast[1] <= 1.0) {
                return Err(Error::param(format!("{:?}: contrast range must lie in [0,1]", a.kind)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRegion {
    pub id: u32,
    pub kind: AnomalyKind,
    #[serde(rename = "box")]
    pub bbox: RotatedBox,
    pub relevance: f64,
    /// Mask pixels belonging to this primitive.
    pub area: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub regions: Vec<TruthRegion>,
    pub distractors: Vec<TruthRegion>,
    /// Primitives dropped because no free spot was found.
    pub placement_warnings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    /// RGB, quantized to 8-bit levels so it round-trips through PNG exactly.
    pub image: RasterF32,
    /// Observed (noisy) depth.
    pub depth: DepthMap,
    pub depth_truth: RasterF32,
    pub anomaly_mask: Mask,
    pub shadow_mask: Mask,
    pub specular_mask: Mask,
    pub truth: SceneTruth,
}

/// File names of a bundle written by [`SceneBundle::write_to`].
pub mod files {
    pub const IMAGE: &str = "image.png";
    pub const DEPTH: &str = "depth.ard1";
    pub const DEPTH_TRUTH: &str = "depth_truth.ard1";
    pub const ANOMALY_MASK: &str = "anomaly_mask.png";
    pub const SHADOW_MASK: &str = "shadow_mask.png";
    pub const SPECULAR_MASK: &str = "specular_mask.png";
    pub const TRUTH: &str = "truth.json";
}

impl SceneBundle {
    /// Writes the image, observed and true depth, the three masks and the truth JSON.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_bytes(dir.join(files::IMAGE), &io::encode_png8(&self.image)?)?;
        write_ard1(dir.join(files::DEPTH), &self.depth.raster)?;
        write_ard1(dir.join(files::DEPTH_TRUTH), &self.depth_truth)?;
        io::write_bytes(dir.join(files::ANOMALY_MASK), &io::encode_mask(&self.anomaly_mask)?)?;
        io::write_bytes(dir.join(files::SHADOW_MASK), &io::encode_mask(&self.shadow_mask)?)?;
        io::write_bytes(dir.join(files::SPECULAR_MASK), &io::encode_mask(&self.specular_mask)?)?;
        let mut truth = serde_json::to_string_pretty(&self.truth)?;
        truth.push('\n');
        std::fs::write(dir.join(files::TRUTH), truth)?;
        Ok(())
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Sum of bilinearly smoothed random lattices, in roughly [-1, 1].
fn value_noise(w: usize, h: usize, t: &TerrainSpec, rng: &mut Lcg) -> Vec<f64> {
    let mut out = vec![0f64; w * h];
    let mut amp = 1.0;
    let mut norm = 0.0;
    for o in 0..t.octaves {
        let cell = (t.cell >> o).max(2);
        let (gw, gh) = (w / cell + 2, h / cell + 2);
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.uniform(-1.0, 1.0)).collect();
        for y in 0..h {
            let fy = y as f64 / cell as f64;
            let (iy, ty) = (fy as usize, smoothstep(fy.fract()));
            for x in 0..w {
                let fx = x as f64 / cell as f64;
                let (ix, tx) = (fx as usize, smoothstep(fx.fract()));
                let l = |i: usize, j: usize| lattice[j * gw + i];
                let top = l(ix, iy) * (1.0 - tx) + l(ix + 1, iy) * tx;
                let bot = l(ix, iy + 1) * (1.0 - tx) + l(ix + 1, iy + 1) * tx;
                out[y * w + x] += amp * (top * (1.0 - ty) + bot * ty);
            }
        }
        norm += amp;
        amp *= 0.5;
    }
    out.iter_mut().for_each(|v| *v /= norm);
    out
}

struct Placed {
    kind: AnomalyKind,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    contrast: f64,
    /// Ripple wavelength or rock texture seed.
    param: u64,
}

impl Placed {
    /// Normalized elliptic radius and local coordinates.
    fn local(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt(), u, v)
    }

    fn bounds(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let r = self.a.max(self.b) + 2.0;
        let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64 - 1.0) as usize;
        (clamp(self.cx - r, w), clamp(self.cy - r, h), clamp(self.cx + r, w), clamp(self.cy + r, h))
    }
}

/// Per-pixel uniform in [0,1) from a splitmix64-style finalizer.
fn hash01(seed: u64, x: usize, y: usize) -> f64 {
    let mut z = seed ^ (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = Lcg::new(spec.seed);
    let terrain = value_noise(w, h, &spec.terrain, &mut rng);
    let relief = value_noise(w, h, &TerrainSpec { octaves: 2, ..spec.terrain.clone() }, &mut rng);
    let dust = value_noise(w, h, &TerrainSpec { octaves: 3, ..spec.terrain.clone() }, &mut rng);

    // placement: non-overlapping bounding circles with a small margin
    let mut placed: Vec<Placed> = Vec::new();
    let mut warnings = 0;
    for a in &spec.anomalies {
        for _ in 0..a.count {
            let mut ok = None;
            for _attempt in 0..64 {
                let d = rng.uniform(a.size[0], a.size[1]);
                let aspect = match a.kind {
                    AnomalyKind::Ripple => rng.uniform(0.35, 0.55),
                    _ => rng.uniform(0.65, 1.0),
                };
                let (ra, rb) = (d / 2.0, (d / 2.0 * aspect).max(1.0));
                let theta = rng.uniform(0.0, std::f64::consts::PI);
                let contrast = rng.uniform(a.contrast[0], a.contrast[1]);
                let margin = ra + 3.0;
                if 2.0 * margin >= w.min(h) as f64 {
                    break;
                }
                let cx = rng.uniform(margin, w as f64 - margin);
                let cy = rng.uniform(margin, h as f64 - margin);
                let free = placed
                    .iter()
                    .all(|p| (p.cx - cx).hypot(p.cy - cy) > p.a + ra + 4.0);
                let param = rng.next_u64();
                if free {
                    ok = Some(Placed { kind: a.kind, cx, cy, a: ra, b: rb, theta, contrast, param });
                    break;
                }
            }
            match ok {
                Some(p) => placed.push(p),
                None => warnings += 1,
            }
        }
    }
    if warnings > 0 {
        log::warn!("scene {}: {warnings} primitives could not be placed", spec.seed);
    }

    let t = &spec.terrain;
    let mut lum: Vec<f64> = terrain.iter().map(|n| t.base_level + t.amplitude * n).collect();
    // fraction of terrain tint kept per pixel (dust varies it, glints are whiter)
    let mut tint_mix: Vec<f64> = dust.iter().map(|n| 0.85 + 0.15 * n).collect();
    let ds = &spec.depth;
    let mut depth: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            ds.base + ds.slope[0] * x + ds.slope[1] * y + ds.terrain_relief * relief[i]
        })
        .collect();
    let mut anomaly_mask = Mask::new(w, h);
    let mut shadow_mask = Mask::new(w, h);
    let mut specular_mask = Mask::new(w, h);
    let max_rock = spec
        .anomalies
        .iter()
        .filter(|a| matches!(a.kind, AnomalyKind::Rock | AnomalyKind::BrightRock))
        .map(|a| a.size[1])
        .fold(1.0, f64::max);

    let mut regions = Vec::new();
    let mut distractors = Vec::new();
    for p in &placed {
        let (x0, y0, x1, y1) = p.bounds(w, h);
        let mut pts = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                let i = y * w + x;
                let (r, u, v) = p.local(x as f64, y as f64);
                match p.kind {
                    AnomalyKind::Rock | AnomalyKind::BrightRock => {
                        if r > 1.0 {
                            continue;
                        }
                        let bright = p.kind == AnomalyKind::BrightRock;
                        let albedo = if bright { 1.0 + p.contrast } else { 1.0 - p.contrast };
                        // hemisphere shading lit from the upper left
                        let (nx, ny) = (u / p.a, v / p.b);
                        let (c, s) = (p.theta.cos(), p.theta.sin());
                        let (gx, gy) = (nx * c - ny * s, nx * s + ny * c);
                        let shade = 1.0 - 0.08 * (gx + gy) / std::f64::consts::SQRT_2;
                        // layered strata across the minor axis plus fine grain
                        let period = 3.0 + (p.param % 3) as f64;
                        let phase = (p.param >> 8) as f64;
                        let strata = 0.5 * (2.0 * std::f64::consts::PI * v / period + phase).sin();
                        let grain = 0.07 * (strata + 0.5 * (hash01(p.param, x, y) - 0.5));
                        lum[i] = (t.base_level * albedo * shade + grain).clamp(0.02, 0.98);
                        let height = ds.bump_amplitude * (2.0 * p.a / max_rock) * (1.0 - r * r).max(0.0).sqrt();
                        depth[i] -= height;
                        anomaly_mask.data[i] = true;
                        pts.push((x as f64, y as f64));
                    }
                    AnomalyKind::Ripple => {
                        if r > 1.0 {
                            continue;
                        }
                        let period = 4.0 + (p.param % 3) as f64;
                        let wave = (2.0 * std::f64::consts::PI * u / period).sin();
                        let fade = smoothstep((1.0 - r) / 0.15);
                        lum[i] += p.contrast * wave * fade;
                        depth[i] -= 0.02 * wave * fade;
                        anomaly_mask.data[i] = true;
                        pts.push((x as f64, y as f64));
                    }
                    AnomalyKind::ShadowPatch => {
                        let s = smoothstep((1.0 - r) / 0.25);
                        if s <= 0.0 {
                            continue;
                        }
                        lum[i] *= 1.0 - p.contrast * s;
                        if r <= 0.9 {
                            shadow_mask.data[i] = true;
                            pts.push((x as f64, y as f64));
                        }
                    }
                    AnomalyKind::SpecularSpot => {
                        let s = smoothstep((1.0 - r) / 0.4);
                        if s <= 0.0 {
                            continue;
                        }
                        lum[i] += p.contrast * (1.0 - lum[i]) * s;
                        tint_mix[i] = 1.0 - 0.8 * s;
                        if r <= 0.9 {
                            specular_mask.data[i] = true;
                            pts.push((x as f64, y as f64));
                        }
                    }
                }
            }
        }
        if pts.is_empty() {
            continue;
        }
        let region = TruthRegion {
            id: 0,
            kind: p.kind,
            bbox: min_area_rect(&pts)?,
            relevance: p.kind.relevance(),
            area: pts.len(),
        };
        if p.kind.is_target() {
            regions.push(region);
        } else {
            distractors.push(region);
        }
    }
    for (i, r) in regions.iter_mut().enumerate() {
        r.id = i as u32 + 1;
    }
    for (i, r) in distractors.iter_mut().enumerate() {
        r.id = i as u32 + 1;
    }

    let quant = |v: f64| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32;
    let mut rgb = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        let l = lum[i].clamp(0.0, 1.0);
        for c in 0..3 {
            let tinted = l * t.tint[c] / 0.8;
            rgb.push(quant(tinted * tint_mix[i] + l * (1.0 - tint_mix[i])));
        }
    }
    let image = RasterF32::new(w, h, 3, rgb)?;
    let depth_truth = RasterF32::new(w, h, 1, depth.iter().map(|&d| d as f32).collect())?;
    let observed: Vec<f32> = depth
        .iter()
        .map(|&d| (d + ds.noise * rng.normal()).max(1e-3) as f32)
        .collect();
    let depth = DepthMap::new(RasterF32::new(w, h, 1, observed)?, DepthUnit::Meters)?;

    Ok(SceneBundle {
        image,
        depth,
        depth_truth,
        anomaly_mask,
        shadow_mask,
        specular_mask,
        truth: SceneTruth {
            seed: spec.seed,
            width: w,
            height: h,
            regions,
            distractors,
            placement_warnings: warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn only(kind: AnomalyKind, count: usize) -> SceneSpec {
        SceneSpec {
            seed: 17,
            width: 128,
            height: 128,
            terrain: TerrainSpec::default(),
            anomalies: vec![AnomalySpec { kind, count, size: [10.0, 20.0], contrast: [0.3, 0.4] }],
            depth: DepthSpec::default(),
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = SceneSpec::standard(3, 96, 80);
        assert_eq!(generate_scene(&s).unwrap(), generate_scene(&s).unwrap());
        let other = SceneSpec::standard(4, 96, 80);
        assert_ne!(generate_scene(&s).unwrap().image, generate_scene(&other).unwrap().image);
    }

    #[test]
    fn zero_count_gives_empty_mask() {
        let b = generate_scene(&only(AnomalyKind::Rock, 0)).unwrap();
        assert_eq!(b.anomaly_mask.count(), 0);
        assert!(b.truth.regions.is_empty());
    }

    #[test]
    fn five_rocks_audit() {
        let b = generate_scene(&only(AnomalyKind::Rock, 5)).unwrap();
        assert_eq!(b.truth.regions.len(), 5);
        assert_eq!(b.truth.placement_warnings, 0);
        let total: usize = b.truth.regions.iter().map(|r| r.area).sum();
        assert_eq!(total, b.anomaly_mask.count());
        for r in &b.truth.regions {
            // ellipse with diameter in [10, 20] and aspect in [0.65, 1]
            let lo = std::f64::consts::PI * 25.0 * 0.65 * 0.7;
            let hi = std::f64::consts::PI * 100.0 * 1.2;
            assert!((lo..=hi).contains(&(r.area as f64)), "area {}", r.area);
        }
    }

    #[test]
    fn shadows_leave_depth_untouched() {
        let mut with = only(AnomalyKind::ShadowPatch, 3);
        with.depth.noise = 0.0;
        let b = generate_scene(&with).unwrap();
        let mut none = with.clone();
        none.anomalies[0].count = 0;
        let n = generate_scene(&none).unwrap();
        assert_eq!(b.depth_truth, n.depth_truth);
        assert!(b.shadow_mask.count() > 0);
        assert_eq!(b.anomaly_mask.count(), 0);
        let dark: f64 = (0..128 * 128)
            .filter(|&i| b.shadow_mask.data[i])
            .map(|i| b.image.data()[3 * i] as f64)
            .sum::<f64>()
            / b.shadow_mask.count() as f64;
        let plain: f64 = (0..128 * 128)
            .filter(|&i| b.shadow_mask.data[i])
            .map(|i| n.image.data()[3 * i] as f64)
            .sum::<f64>()
            / b.shadow_mask.count() as f64;
        assert!(dark < 0.7 * plain);
    }

    #[test]
    fn rocks_have_depth_rims() {
        let mut s = only(AnomalyKind::Rock, 2);
        s.depth.noise = 0.0;
        let b = generate_scene(&s).unwrap();
        let g = crate::depthpp::depth_gradient(&DepthMap::new(b.depth_truth.clone(), DepthUnit::Meters).unwrap());
        for r in &b.truth.regions {
            let (cx, cy) = (r.bbox.cx, r.bbox.cy);
            // gradient along the rim exceeds the flat-terrain level
            let rim = (0..64)
                .map(|k| {
                    let t = k as f64 / 64.0 * std::f64::consts::TAU;
                    let x = (cx + 0.9 * r.bbox.h / 2.0 * t.cos()).round() as usize;
                    let y = (cy + 0.9 * r.bbox.h / 2.0 * t.sin()).round() as usize;
                    g.get(x, y)
                })
                .fold(0f32, f32::max);
            assert!(rim > 0.02, "rim gradient {rim}");
        }
    }

    #[test]
    fn overcrowding_reports_warning() {
        let mut s = only(AnomalyKind::Rock, 200);
        s.anomalies[0].size = [30.0, 40.0];
        let b = generate_scene(&s).unwrap();
        assert!(b.truth.placement_warnings > 0);
        assert_eq!(b.truth.regions.len() + b.truth.placement_warnings, 200);
    }

    #[test]
    fn image_is_quantized() {
        let b = generate_scene(&SceneSpec::standard(1, 64, 64)).unwrap();
        for &v in b.image.data() {
            assert_eq!((v * 255.0).round() / 255.0, v);
        }
    }

    #[test]
    fn rejects_bad_spec() {
        let mut s = only(AnomalyKind::Rock, 1);
        s.anomalies[0].size = [1.0, 3.0];
        assert!(generate_scene(&s).is_err());
    }
}
