//! Input enhancement chain: resize, bilateral denoise, CLAHE, adaptive gamma
//! and light unsharp masking, applied in that order.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::raster::{resize_bicubic, RasterF32};

const CLAHE_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BilateralParams {
    pub window: usize,
    pub sigma_s: f64,
    pub sigma_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ClaheParams {
    pub clip_limit: f64,
    /// Tiles along (x, y).
    pub tile_grid: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct UnsharpParams {
    /// Gaussian sigma of the blur, in pixels.
    pub radius: f64,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EnhanceSteps {
    pub resize: bool,
    pub bilateral: bool,
    pub clahe: bool,
    pub gamma: bool,
    pub unsharp: bool,
}

impl EnhanceSteps {
    pub const ALL: Self = Self {
        resize: true,
        bilateral: true,
        clahe: true,
        gamma: true,
        unsharp: true,
    };
    pub const NONE: Self = Self {
        resize: false,
        bilateral: false,
        clahe: false,
        gamma: false,
        unsharp: false,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceParams {
    /// Working resolution (width, height); `None` keeps the input size.
    pub resize: Option<[usize; 2]>,
    pub bilateral: BilateralParams,
    pub clahe: ClaheParams,
    pub gamma_epsilon: f64,
    /// Bounds applied to the adaptive gamma exponent.
    pub gamma_range: [f64; 2],
    pub unsharp: UnsharpParams,
    pub enabled_steps: EnhanceSteps,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self {
            resize: None,
            bilateral: BilateralParams {
                window: 5,
                sigma_s: 3.0,
                sigma_r: 0.1,
            },
            clahe: ClaheParams {
                clip_limit: 2.0,
                tile_grid: [8, 8],
            },
            gamma_epsilon: 1e-6,
            gamma_range: [0.2, 5.0],
            unsharp: UnsharpParams {
                radius: 3.0,
                amount: 0.5,
            },
            enabled_steps: EnhanceSteps::ALL,
        }
    }
}

impl EnhanceParams {
    pub fn validate(&self) -> Result<()> {
        let b = &self.bilateral;
        if b.window < 3 || b.window % 2 == 0 {
            return Err(Error::param(format!("bilateral window {} must be odd and >= 3", b.window)));
        }
        if !(b.sigma_s > 0.0 && b.sigma_r > 0.0) {
            return Err(Error::param("bilateral sigmas must be positive"));
        }
        if !(self.clahe.clip_limit > 0.0) {
            return Err(Error::param("clahe clip_limit must be positive"));
        }
        if self.clahe.tile_grid[0] < 2 || self.clahe.tile_grid[1] < 2 {
            return Err(Error::param("clahe tile_grid must be at least (2,2)"));
        }
        if !(self.gamma_epsilon > 0.0) {
            return Err(Error::param("gamma_epsilon must be positive"));
        }
        let [g0, g1] = self.gamma_range;
        if !(g0 > 0.0 && g0 <= g1 && g1.is_finite()) {
            return Err(Error::param("gamma_range must satisfy 0 < min <= max"));
        }
        if !(self.unsharp.radius > 0.0 && self.unsharp.amount >= 0.0) {
            return Err(Error::param("unsharp radius must be > 0 and amount >= 0"));
        }
        if let Some([w, h]) = self.resize {
            if w < 4 || h < 4 {
                return Err(Error::param("resize target must be at least 4x4"));
            }
        }
        Ok(())
    }
}

/// Edge-preserving bilateral filter with Gaussian spatial and range kernels.
/// The neighborhood is the in-bounds part of the square window.
pub fn bilateral_filter(img: &RasterF32, p: &EnhanceParams) -> Result<RasterF32> {
    img.require_channels(1)?;
    p.validate()?;
    let bp = &p.bilateral;
    let (w, h) = img.dims();
    if bp.window > w.min(h) {
        return Err(Error::param(format!(
            "bilateral window {} larger than image {w}x{h}",
            bp.window
        )));
    }
    let r = (bp.window / 2) as isize;
    let inv_s = 1.0 / (2.0 * bp.sigma_s * bp.sigma_s);
    let inv_r = 1.0 / (2.0 * bp.sigma_r * bp.sigma_r);
    let spatial: Vec<f64> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (-((dx * dx + dy * dy) as f64) * inv_s).exp()))
        .collect();
    let win = bp.window;

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let center = img.get(x as usize, y as usize) as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for dy in -r..=r {
                let yy = y + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let v = img.get(xx as usize, yy as usize) as f64;
                    let d = v - center;
                    let wt = spatial[((dy + r) as usize) * win + (dx + r) as usize]
                        * (-d * d * inv_r).exp();
                    num += wt * v;
                    den += wt;
                }
            }
            out.push((num / den) as f32);
        }
    }
    Ok(RasterF32::from_vec_unchecked(w, h, 1, out))
}

fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * (CLAHE_BINS - 1) as f32).round() as usize).min(CLAHE_BINS - 1)
}

/// Builds one tile's lookup table from a clipped, redistributed histogram.
fn tile_lut(hist: &mut [f64; CLAHE_BINS], clip_limit: f64) -> [f32; CLAHE_BINS] {
    let total: f64 = hist.iter().sum();
    let limit = clip_limit * total / CLAHE_BINS as f64;
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / CLAHE_BINS as f64;
    for h in hist.iter_mut() {
        *h += share;
    }

    let mut cdf = [0f64; CLAHE_BINS];
    let mut acc = 0.0;
    for (i, h) in hist.iter().enumerate() {
        acc += h;
        cdf[i] = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0.0).unwrap_or(0.0);
    let span = total - cdf_min;
    let mut lut = [0f32; CLAHE_BINS];
    for (i, l) in lut.iter_mut().enumerate() {
        *l = if span > 0.0 {
            ((cdf[i] - cdf_min).max(0.0) / span) as f32
        } else {
            // single occupied bin: leave intensities where they are
            i as f32 / (CLAHE_BINS - 1) as f32
        };
    }
    lut
}

/// Contrast-limited adaptive histogram equalization with bilinear
/// interpolation between tile lookup tables. `clip_limit` is relative to the
/// mean bin count of a tile.
pub fn clahe(img: &RasterF32, p: &EnhanceParams) -> Result<RasterF32> {
    img.require_channels(1)?;
    p.validate()?;
    let [gx, gy] = p.clahe.tile_grid;
    let (w, h) = img.dims();
    if w < gx || h < gy {
        return Err(Error::param(format!(
            "image {w}x{h} smaller than tile grid {gx}x{gy}"
        )));
    }
    let x_edges: Vec<usize> = (0..=gx).map(|i| i * w / gx).collect();
    let y_edges: Vec<usize> = (0..=gy).map(|i| i * h / gy).collect();

    let mut luts = Vec::with_capacity(gx * gy);
    for ty in 0..gy {
        for tx in 0..gx {
            let mut hist = [0f64; CLAHE_BINS];
            for y in y_edges[ty]..y_edges[ty + 1] {
                for x in x_edges[tx]..x_edges[tx + 1] {
                    hist[bin_of(img.get(x, y))] += 1.0;
                }
            }
            luts.push(tile_lut(&mut hist, p.clahe.clip_limit));
        }
    }
    let centers = |edges: &[usize]| -> Vec<f64> {
        edges
            .windows(2)
            .map(|e| (e[0] + e[1]) as f64 / 2.0 - 0.5)
            .collect()
    };
    let cx = centers(&x_edges);
    let cy = centers(&y_edges);
    // (lower tile index, weight of upper tile) for each coordinate
    let locate = |c: &[f64], v: f64| -> (usize, f64) {
        if v <= c[0] {
            return (0, 0.0);
        }
        let last = c.len() - 1;
        if v >= c[last] {
            return (last - 1, 1.0);
        }
        let i = c.partition_point(|&cc| cc <= v) - 1;
        (i, (v - c[i]) / (c[i + 1] - c[i]))
    };

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (ty, fy) = locate(&cy, y as f64);
        for x in 0..w {
            let (tx, fx) = locate(&cx, x as f64);
            let b = bin_of(img.get(x, y));
            let l = |ix: usize, iy: usize| luts[iy * gx + ix][b] as f64;
            let top = l(tx, ty) * (1.0 - fx) + l(tx + 1, ty) * fx;
            let bot = l(tx, ty + 1) * (1.0 - fx) + l(tx + 1, ty + 1) * fx;
            out.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0) as f32);
        }
    }
    Ok(RasterF32::from_vec_unchecked(w, h, 1, out))
}

/// Unclamped exponent `log(0.5) / log(mean + eps)`.
pub fn raw_gamma(mean: f64, eps: f64) -> f64 {
    0.5f64.ln() / (mean + eps).ln()
}

/// Gamma exponent bounded to `p.gamma_range`. Means at or above 1 - eps have no
/// finite positive exponent and take the upper bound.
pub fn gamma_for_mean(mean: f64, p: &EnhanceParams) -> f64 {
    let [lo, hi] = p.gamma_range;
    if mean + p.gamma_epsilon >= 1.0 {
        return hi;
    }
    raw_gamma(mean, p.gamma_epsilon).clamp(lo, hi)
}

pub fn adaptive_gamma(img: &RasterF32, p: &EnhanceParams) -> Result<RasterF32> {
    img.require_channels(1)?;
    p.validate()?;
    let gamma = gamma_for_mean(img.mean(), p) as f32;
    Ok(img.map(|v| v.clamp(0.0, 1.0).powf(gamma)))
}

pub(crate) fn unsharp_unclamped(img: &RasterF32, p: &EnhanceParams) -> Vec<f32> {
    let blur = gaussian_blur(img, p.unsharp.radius);
    let amount = p.unsharp.amount as f32;
    img.data()
        .iter()
        .zip(blur.data())
        .map(|(&v, &b)| v + amount * (v - b))
        .collect()
}

pub fn unsharp_mask(img: &RasterF32, p: &EnhanceParams) -> Result<RasterF32> {
    img.require_channels(1)?;
    p.validate()?;
    if p.unsharp.amount == 0.0 {
        return Ok(img.clone());
    }
    let data = unsharp_unclamped(img, p)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(RasterF32::from_vec_unchecked(img.width(), img.height(), 1, data))
}

fn enhance_gray(gray: &RasterF32, p: &EnhanceParams) -> Result<RasterF32> {
    let s = p.enabled_steps;
    let mut cur = gray.clone();
    if s.bilateral {
        cur = bilateral_filter(&cur, p)?;
    }
    if s.clahe {
        cur = clahe(&cur, p)?;
    }
    if s.gamma {
        cur = adaptive_gamma(&cur, p)?;
    }
    if s.unsharp {
        cur = unsharp_mask(&cur, p)?;
    }
    Ok(cur)
}

/// Runs the enabled steps in order resize, bilateral, CLAHE, gamma, unsharp.
///
/// Three-channel inputs are enhanced on luminance; chroma is carried through by
/// rescaling each pixel's RGB with the luminance ratio.
pub fn enhance_pipeline(img: &RasterF32, p: &EnhanceParams) -> Result<RasterF32> {
    p.validate()?;
    let resized = match (p.enabled_steps.resize, p.resize) {
        (true, Some([w, h])) => resize_bicubic(img, w, h)?,
        _ => img.clone(),
    };
    if resized.channels() == 1 {
        return enhance_gray(&resized, p);
    }
    let luma = resized.to_gray();
    let enhanced = enhance_gray(&luma, p)?;
    let mut data = Vec::with_capacity(resized.data().len());
    for (i, px) in resized.data().chunks_exact(3).enumerate() {
        let l0 = luma.data()[i];
        let l1 = enhanced.data()[i];
        if l0 > 1e-6 {
            let k = l1 / l0;
            data.extend(px.iter().map(|&c| (c * k).clamp(0.0, 1.0)));
        } else {
            data.extend([l1; 3]);
        }
    }
    Ok(RasterF32::from_vec_unchecked(
        resized.width(),
        resized.height(),
        3,
        data,
    ))
}
