//! Depth ingestion and post-processing: edge-guided gradient attenuation,
//! gradient-domain (Poisson) smoothing and guided weighted-median filtering.
//!
//! Depth estimation itself is external; maps arrive either as 16-bit PNG with
//! a scale factor or as `ARD1` raw float files.

use std::io::{Read, Write};
use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{resize_bicubic, RasterF32};

pub const ARD1_MAGIC: &[u8; 4] = b"ARD1";
const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DepthUnit {
    Relative,
    Meters,
}

/// Positive depth raster. Pixels outside `valid_mask` hold the mean valid depth
/// so that filters never see non-positive values.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub raster: RasterF32,
    pub unit: DepthUnit,
    pub valid_mask: Option<Vec<bool>>,
}

impl DepthMap {
    /// Wraps a raster; non-positive samples become invalid.
    pub fn new(raster: RasterF32, unit: DepthUnit) -> Result<Self> {
        raster.require_channels(1)?;
        let valid: Vec<bool> = raster.data().iter().map(|&v| v > 0.0).collect();
        Self::with_mask(raster, unit, valid)
    }

    fn with_mask(raster: RasterF32, unit: DepthUnit, valid: Vec<bool>) -> Result<Self> {
        let n_valid = valid.iter().filter(|&&v| v).count();
        if n_valid == 0 {
            return Err(Error::input("depth map has no positive samples"));
        }
        if n_valid == valid.len() {
            return Ok(Self {
                raster,
                unit,
                valid_mask: None,
            });
        }
        let fill = raster
            .data()
            .iter()
            .zip(&valid)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v as f64)
            .sum::<f64>()
            / n_valid as f64;
        let (w, h) = raster.dims();
        let data = raster
            .data()
            .iter()
            .zip(&valid)
            .map(|(&v, &ok)| if ok { v } else { fill as f32 })
            .collect();
        Ok(Self {
            raster: RasterF32::from_vec_unchecked(w, h, 1, data),
            unit,
            valid_mask: Some(valid),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.raster.dims()
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.valid_mask.as_ref().map_or(true, |m| m[i])
    }

    fn with_raster(&self, raster: RasterF32) -> Self {
        Self {
            raster,
            unit: self.unit,
            valid_mask: self.valid_mask.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DepthLoadOptions {
    /// Multiplier applied to 16-bit PNG samples (e.g. 0.001 for millimetres).
    pub png_scale: f32,
    /// Unit tag attached to the loaded map.
    pub unit: DepthUnit,
    /// Resample to the working resolution instead of rejecting a size mismatch.
    pub resample: bool,
}

impl Default for DepthLoadOptions {
    fn default() -> Self {
        Self {
            png_scale: 0.001,
            unit: DepthUnit::Meters,
            resample: true,
        }
    }
}

pub fn write_ard1(path: impl AsRef<Path>, raster: &RasterF32) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&encode_ard1(raster)?)?;
    f.flush()?;
    Ok(())
}

pub fn encode_ard1(raster: &RasterF32) -> Result<Vec<u8>> {
    raster.require_channels(1)?;
    let mut buf = Vec::with_capacity(12 + raster.data().len() * 4);
    buf.extend_from_slice(ARD1_MAGIC);
    buf.extend_from_slice(&(raster.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(raster.height() as u32).to_le_bytes());
    for v in raster.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

/// Decodes an `ARD1` blob. Non-finite samples are returned as 0 (invalid).
pub fn decode_ard1(bytes: &[u8]) -> Result<RasterF32> {
    if bytes.len() < 12 || &bytes[..4] != ARD1_MAGIC {
        return Err(Error::Format("missing ARD1 magic".into()));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("ARD1 dimensions overflow".into()))?;
    if w == 0 || h == 0 || bytes.len() - 12 != expected {
        return Err(Error::Format(format!(
            "ARD1 payload {} bytes does not match {w}x{h}",
            bytes.len() - 12
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if v.is_finite() {
                v
            } else {
                0.0
            }
        })
        .collect();
    RasterF32::new(w, h, 1, data)
}

pub fn read_ard1(path: impl AsRef<Path>) -> Result<RasterF32> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_ard1(&bytes)
}

/// Decodes depth bytes (ARD1 or 16-bit grayscale PNG) and reconciles them with
/// the working resolution.
pub fn decode_depth(
    bytes: &[u8],
    expected_dims: Option<(usize, usize)>,
    opts: &DepthLoadOptions,
) -> Result<DepthMap> {
    let raster = if bytes.starts_with(ARD1_MAGIC) {
        decode_ard1(bytes)?
    } else if bytes.starts_with(PNG_SIGNATURE) {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        let gray = img.to_luma16();
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        let data = gray.into_raw().into_iter().map(|v| v as f32 * opts.png_scale).collect();
        RasterF32::new(w, h, 1, data)?
    } else {
        return Err(Error::Format("depth must be ARD1 or PNG".into()));
    };
    let valid: Vec<bool> = raster.data().iter().map(|&v| v > 0.0).collect();
    let depth = DepthMap::with_mask(raster, opts.unit, valid)?;
    match expected_dims {
        Some(dims) if dims != depth.dims() => {
            if !opts.resample {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    got: depth.dims(),
                });
            }
            resample_depth(&depth, dims.0, dims.1)
        }
        _ => Ok(depth),
    }
}

pub fn load_depth(
    path: impl AsRef<Path>,
    expected_dims: Option<(usize, usize)>,
    opts: &DepthLoadOptions,
) -> Result<DepthMap> {
    let bytes = std::fs::read(path)?;
    decode_depth(&bytes, expected_dims, opts)
}

fn resample_depth(d: &DepthMap, w: usize, h: usize) -> Result<DepthMap> {
    let raster = resize_bicubic(&d.raster, w, h)?;
    let valid_mask = d.valid_mask.as_ref().map(|m| {
        let (sw, sh) = d.dims();
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = ((y as f64 + 0.5) * sh as f64 / h as f64) as usize;
            for x in 0..w {
                let sx = ((x as f64 + 0.5) * sw as f64 / w as f64) as usize;
                out.push(m[sy.min(sh - 1) * sw + sx.min(sw - 1)]);
            }
        }
        out
    });
    Ok(DepthMap {
        raster,
        unit: d.unit,
        valid_mask,
    })
}

/// Demo-only depth stand-in: brightness read as inverse depth. Not a measurement.
pub fn brightness_proxy_depth(gray: &RasterF32) -> Result<DepthMap> {
    gray.require_channels(1)?;
    log::warn!("using brightness-as-inverse-depth proxy; depth cues are not physical");
    DepthMap::new(gray.map(|v| 1.0 / (0.05 + v.clamp(0.0, 1.0))), DepthUnit::Relative)
}

/// Discrete gradient on grid edges: `gx(x,y)` is the step from (x,y) to (x+1,y),
/// `gy(x,y)` from (x,y) to (x,y+1). Steps leaving the grid are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub gx: RasterF32,
    pub gy: RasterF32,
}

impl GradientField {
    /// Backward-difference divergence matching the forward-difference gradient,
    /// so that `divergence(forward_gradient(u))` is the Neumann 5-point Laplacian.
    pub fn divergence(&self) -> Vec<f64> {
        let (w, h) = self.gx.dims();
        let mut div = vec![0f64; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut v = self.gx.get(x, y) as f64 + self.gy.get(x, y) as f64;
                if x > 0 {
                    v -= self.gx.get(x - 1, y) as f64;
                }
                if y > 0 {
                    v -= self.gy.get(x, y - 1) as f64;
                }
                div[y * w + x] = v;
            }
        }
        div
    }

    pub fn magnitude(&self) -> RasterF32 {
        let data = self
            .gx
            .data()
            .iter()
            .zip(self.gy.data())
            .map(|(a, b)| a.hypot(*b))
            .collect();
        RasterF32::from_vec_unchecked(self.gx.width(), self.gx.height(), 1, data)
    }
}

/// Forward-difference gradient field of a depth map; steps touching invalid
/// pixels are zero.
pub fn depth_gradient_field(d: &DepthMap) -> GradientField {
    let (w, h) = d.dims();
    let r = &d.raster;
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !d.is_valid(i) {
                continue;
            }
            if x + 1 < w && d.is_valid(i + 1) {
                gx[i] = r.get(x + 1, y) - r.get(x, y);
            }
            if y + 1 < h && d.is_valid(i + w) {
                gy[i] = r.get(x, y + 1) - r.get(x, y);
            }
        }
    }
    GradientField {
        gx: RasterF32::from_vec_unchecked(w, h, 1, gx),
        gy: RasterF32::from_vec_unchecked(w, h, 1, gy),
    }
}

/// Damps a depth-gradient field where the image has strong edges:
/// `E'(p) = E(p) * exp(-alpha * |E_I(p)|)`.
pub fn edge_guided_attenuation(
    field: &GradientField,
    img_edges: &RasterF32,
    alpha: f64,
) -> Result<GradientField> {
    img_edges.require_channels(1)?;
    field.gx.require_same_dims(img_edges)?;
    if !(alpha >= 0.0) {
        return Err(Error::param("alpha must be >= 0"));
    }
    let factor: Vec<f32> = img_edges
        .data()
        .iter()
        .map(|&e| (-alpha * e.abs() as f64).exp() as f32)
        .collect();
    let scale = |r: &RasterF32| {
        let data = r.data().iter().zip(&factor).map(|(v, f)| v * f).collect();
        RasterF32::from_vec_unchecked(r.width(), r.height(), 1, data)
    };
    Ok(GradientField {
        gx: scale(&field.gx),
        gy: scale(&field.gy),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PoissonParams {
    pub max_iters: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum MedianGuide {
    Image,
    Depth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WeightedMedianParams {
    pub window: usize,
    pub guide: MedianGuide,
    /// Gaussian affinity width in guide units.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DepthPostParams {
    pub alpha: f64,
    pub poisson: PoissonParams,
    pub wmf: WeightedMedianParams,
}

impl Default for DepthPostParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            poisson: PoissonParams {
                max_iters: 500,
                tolerance: 1e-4,
            },
            wmf: WeightedMedianParams {
                window: 3,
                guide: MedianGuide::Image,
                sigma: 0.1,
            },
        }
    }
}

impl DepthPostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("depth alpha must be finite and >= 0"));
        }
        if !(self.poisson.tolerance > 0.0) {
            return Err(Error::param("poisson tolerance must be > 0"));
        }
        if self.wmf.window == 0 || self.wmf.window % 2 == 0 {
            return Err(Error::param("weighted median window must be odd"));
        }
        if !(self.wmf.sigma > 0.0) {
            return Err(Error::param("weighted median sigma must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SmoothResult {
    pub depth: DepthMap,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm residual after each sweep (index 0 is the initial guess).
    pub residuals: Vec<f64>,
}

fn poisson_residual(u: &[f64], div: &[f64], w: usize, h: usize) -> f64 {
    let mut worst = 0f64;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut lap = 0.0;
            if x > 0 {
                lap += u[i - 1] - u[i];
            }
            if x + 1 < w {
                lap += u[i + 1] - u[i];
            }
            if y > 0 {
                lap += u[i - w] - u[i];
            }
            if y + 1 < h {
                lap += u[i + w] - u[i];
            }
            worst = worst.max((lap - div[i]).abs());
        }
    }
    worst
}

/// Solves `lap(D') = div(field)` with Neumann boundaries by lexicographic
/// Gauss-Seidel starting from `d`, then shifts the result to `d`'s mean.
/// On non-convergence the last iterate is returned with `converged = false`.
pub fn fast_global_smooth(
    d: &DepthMap,
    field: &GradientField,
    p: &DepthPostParams,
) -> Result<SmoothResult> {
    p.validate()?;
    d.raster.require_same_dims(&field.gx)?;
    let (w, h) = d.dims();
    if w * h == 1 {
        return Ok(SmoothResult {
            depth: d.clone(),
            converged: true,
            iterations: 0,
            residuals: vec![0.0],
        });
    }
    let div = field.divergence();
    let mut u: Vec<f64> = d.raster.data().iter().map(|&v| v as f64).collect();
    let target_mean = u.iter().sum::<f64>() / u.len() as f64;

    let mut residuals = vec![poisson_residual(&u, &div, w, h)];
    let mut converged = residuals[0] < p.poisson.tolerance;
    let mut iterations = 0;
    while !converged && iterations < p.poisson.max_iters {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (mut sum, mut n) = (0.0, 0.0);
                if x > 0 {
                    sum += u[i - 1];
                    n += 1.0;
                }
                if x + 1 < w {
                    sum += u[i + 1];
                    n += 1.0;
                }
                if y > 0 {
                    sum += u[i - w];
                    n += 1.0;
                }
                if y + 1 < h {
                    sum += u[i + w];
                    n += 1.0;
                }
                u[i] = (sum - div[i]) / n;
            }
        }
        iterations += 1;
        let r = poisson_residual(&u, &div, w, h);
        residuals.push(r);
        converged = r < p.poisson.tolerance;
    }
    if !converged {
        log::warn!(
            "poisson smoothing stopped after {iterations} sweeps, residual {:.3e}",
            residuals.last().copied().unwrap_or(f64::NAN)
        );
    }
    let shift = target_mean - u.iter().sum::<f64>() / u.len() as f64;
    let min_valid = d
        .raster
        .data()
        .iter()
        .copied()
        .fold(f32::INFINITY, f32::min)
        .max(f32::MIN_POSITIVE) as f64
        * 1e-3;
    let data = u
        .iter()
        .map(|v| ((v + shift).max(min_valid)) as f32)
        .collect();
    Ok(SmoothResult {
        depth: d.with_raster(RasterF32::from_vec_unchecked(w, h, 1, data)),
        converged,
        iterations,
        residuals,
    })
}

/// Weighted median: the lowest value whose cumulative weight reaches half the
/// total. `samples` is sorted in place by value.
pub fn weighted_median(samples: &mut [(f32, f64)]) -> f32 {
    debug_assert!(!samples.is_empty());
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = samples.iter().map(|s| s.1).sum::<f64>() / 2.0;
    let mut acc = 0.0;
    for &(v, wt) in samples.iter() {
        acc += wt;
        if acc >= half {
            return v;
        }
    }
    samples[samples.len() - 1].0
}

/// Guided weighted-median filter; weights are Gaussian affinities in the guide.
/// Invalid pixels neither contribute nor change.
pub fn weighted_median_filter(
    d: &DepthMap,
    guide: &RasterF32,
    window: usize,
    sigma: f64,
) -> Result<DepthMap> {
    guide.require_channels(1)?;
    d.raster.require_same_dims(guide)?;
    let (w, h) = d.dims();
    if window == 0 || window % 2 == 0 || window > w.min(h) {
        return Err(Error::param(format!(
            "weighted median window {window} must be odd and <= {}",
            w.min(h)
        )));
    }
    let r = (window / 2) as isize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut buf = Vec::with_capacity(window * window);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if !d.is_valid(i) {
                out.push(d.raster.data()[i]);
                continue;
            }
            let g0 = guide.get(x as usize, y as usize) as f64;
            buf.clear();
            for yy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                    let j = yy as usize * w + xx as usize;
                    if !d.is_valid(j) {
                        continue;
                    }
                    let dg = guide.get(xx as usize, yy as usize) as f64 - g0;
                    buf.push((d.raster.data()[j], (-dg * dg * inv).exp()));
                }
            }
            out.push(weighted_median(&mut buf));
        }
    }
    Ok(d.with_raster(RasterF32::from_vec_unchecked(w, h, 1, out)))
}

/// Central-difference gradient magnitude (one-sided at borders and next to
/// invalid pixels; zero at invalid pixels).
pub fn depth_gradient(d: &DepthMap) -> RasterF32 {
    let (w, h) = d.dims();
    let r = &d.raster;
    let diff = |i: usize, prev: Option<usize>, next: Option<usize>| -> f32 {
        let pv = prev.filter(|&j| d.is_valid(j));
        let nv = next.filter(|&j| d.is_valid(j));
        let data = r.data();
        match (pv, nv) {
            (Some(a), Some(b)) => (data[b] - data[a]) / 2.0,
            (None, Some(b)) => data[b] - data[i],
            (Some(a), None) => data[i] - data[a],
            (None, None) => 0.0,
        }
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !d.is_valid(i) {
                out.push(0.0);
                continue;
            }
            let gx = diff(i, (x > 0).then(|| i - 1), (x + 1 < w).then(|| i + 1));
            let gy = diff(i, (y > 0).then(|| i - w), (y + 1 < h).then(|| i + w));
            out.push(gx.hypot(gy));
        }
    }
    RasterF32::from_vec_unchecked(w, h, 1, out)
}

/// 4-neighbor Laplacian; missing or invalid neighbors are skipped (Neumann).
pub fn depth_laplacian(d: &DepthMap) -> RasterF32 {
    let (w, h) = d.dims();
    let data = d.raster.data();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !d.is_valid(i) {
                out.push(0.0);
                continue;
            }
            let mut lap = 0.0;
            for j in [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ]
            .into_iter()
            .flatten()
            {
                if d.is_valid(j) {
                    lap += data[j] - data[i];
                }
            }
            out.push(lap);
        }
    }
    RasterF32::from_vec_unchecked(w, h, 1, out)
}

#[derive(Debug, Clone)]
pub struct DepthPostResult {
    pub depth: DepthMap,
    pub converged: bool,
    pub poisson_iterations: usize,
}

/// Attenuate gradients at image edges, reconstruct, then weighted-median filter.
/// `image_edges` is the normalized image edge magnitude; `image_guide` the
/// enhanced gray frame.
pub fn postprocess_depth(
    d: &DepthMap,
    image_edges: &RasterF32,
    image_guide: &RasterF32,
    p: &DepthPostParams,
) -> Result<DepthPostResult> {
    p.validate()?;
    let field = depth_gradient_field(d);
    let attenuated = edge_guided_attenuation(&field, image_edges, p.alpha)?;
    let smooth = fast_global_smooth(d, &attenuated, p)?;
    let (w, h) = d.dims();
    let depth = if p.wmf.window > 1 && p.wmf.window <= w.min(h) {
        let guide = match p.wmf.guide {
            MedianGuide::Image => image_guide.clone(),
            MedianGuide::Depth => smooth.depth.raster.clone(),
        };
        weighted_median_filter(&smooth.depth, &guide, p.wmf.window, p.wmf.sigma)?
    } else {
        smooth.depth
    };
    Ok(DepthPostResult {
        depth,
        converged: smooth.converged,
        poisson_iterations: smooth.iterations,
    })
}
