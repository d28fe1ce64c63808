//! Anomaly component maps: image texture/edge cues, shadow and specular
//! suppression terms, depth discontinuity cues, patch-statistics Mahalanobis
//! distance and patch-PCA reconstruction error.
//!
//! The distribution-modeling components work on handcrafted patch descriptors
//! (mean, spread, gradient-orientation histogram) and a linear patch basis fitted
//! on reference "normal terrain" patches.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::depthpp::{depth_gradient, depth_laplacian, DepthMap};
use crate::error::{Error, Result};
use crate::filter::{gaussian_blur, laplacian4, sobel, sobel_magnitude};
use crate::raster::{minmax_normalize, LumaSat, RasterF32};

/// Floor for the frame statistics used by the suppression terms.
pub const SUPPRESSION_SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ComponentId {
    Gradient,
    Mslap,
    Dog,
    Recon,
    PatchStats,
    DepthGrad,
    DepthLap,
}

impl ComponentId {
    pub const ALL: [ComponentId; 7] = [
        ComponentId::Gradient,
        ComponentId::Mslap,
        ComponentId::Dog,
        ComponentId::Recon,
        ComponentId::PatchStats,
        ComponentId::DepthGrad,
        ComponentId::DepthLap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentId::Gradient => "gradient",
            ComponentId::Mslap => "mslap",
            ComponentId::Dog => "dog",
            ComponentId::Recon => "recon",
            ComponentId::PatchStats => "patch_stats",
            ComponentId::DepthGrad => "depth_grad",
            ComponentId::DepthLap => "depth_lap",
        }
    }

    /// Image-appearance cues that shadow/specular suppression applies to.
    pub fn is_image_cue(self) -> bool {
        matches!(
            self,
            ComponentId::Gradient | ComponentId::Mslap | ComponentId::Dog | ComponentId::Recon
        )
    }

    pub fn is_depth_cue(self) -> bool {
        matches!(self, ComponentId::DepthGrad | ComponentId::DepthLap)
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ComponentId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown component id '{s}'")))
    }
}

/// A [0,1]-normalized anomaly component together with its pre-normalization range.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMap {
    pub name: ComponentId,
    pub map: RasterF32,
    pub raw_range: (f32, f32),
}

impl ComponentMap {
    pub fn from_raw(name: ComponentId, raw: &RasterF32) -> Result<Self> {
        let map = minmax_normalize(raw)?;
        Ok(Self {
            name,
            map,
            raw_range: raw.min_max(),
        })
    }
}

pub fn gradient_magnitude(img: &RasterF32) -> Result<ComponentMap> {
    img.require_channels(1)?;
    ComponentMap::from_raw(ComponentId::Gradient, &sobel_magnitude(img))
}

/// Scale-normalized |LoG| response `sigma^2 * |lap(G_sigma * I)|`.
pub fn log_response(img: &RasterF32, sigma: f64) -> RasterF32 {
    let s2 = (sigma * sigma) as f32;
    laplacian4(&gaussian_blur(img, sigma)).map(|v| (v * s2).abs())
}

/// Mean scale-normalized |LoG| over `scales`.
pub fn multiscale_laplacian(img: &RasterF32, scales: &[f64]) -> Result<ComponentMap> {
    img.require_channels(1)?;
    if scales.is_empty() || scales.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::param("laplacian scales must be a non-empty list of positive sigmas"));
    }
    let mut acc = vec![0f32; img.len_pixels()];
    for &s in scales {
        for (a, v) in acc.iter_mut().zip(log_response(img, s).data()) {
            *a += v;
        }
    }
    let n = scales.len() as f32;
    let raw = RasterF32::from_vec_unchecked(
        img.width(),
        img.height(),
        1,
        acc.into_iter().map(|v| v / n).collect(),
    );
    ComponentMap::from_raw(ComponentId::Mslap, &raw)
}

pub fn difference_of_gaussians(img: &RasterF32, sigma1: f64, sigma2: f64) -> Result<ComponentMap> {
    img.require_channels(1)?;
    if !(sigma1 > 0.0 && sigma1 <= sigma2) {
        return Err(Error::param("DoG requires 0 < sigma1 <= sigma2"));
    }
    let a = gaussian_blur(img, sigma1);
    let b = gaussian_blur(img, sigma2);
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .collect();
    let raw = RasterF32::from_vec_unchecked(img.width(), img.height(), 1, data);
    ComponentMap::from_raw(ComponentId::Dog, &raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuppressionStats {
    pub mean_l: f64,
    pub sigma_l: f64,
    pub mean_s: f64,
    pub sigma_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuppressionMaps {
    pub shadow: RasterF32,
    pub specular: RasterF32,
    pub stats: SuppressionStats,
}

fn mean_std(r: &RasterF32) -> (f64, f64) {
    let m = r.mean();
    let var = r.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / r.data().len() as f64;
    (m, var.sqrt())
}

/// Gaussian affinity of luminance and saturation to their frame means. Pixels
/// far from the typical brightness/saturation (deep shadow, glare) get low values.
pub fn suppression_maps(ls: &LumaSat) -> Result<SuppressionMaps> {
    ls.luminance.require_channels(1)?;
    ls.luminance.require_same_dims(&ls.saturation)?;
    let (mean_l, sl) = mean_std(&ls.luminance);
    let (mean_s, ss) = mean_std(&ls.saturation);
    let sigma_l = sl.max(SUPPRESSION_SIGMA_FLOOR);
    let sigma_s = ss.max(SUPPRESSION_SIGMA_FLOOR);
    let affinity = |r: &RasterF32, m: f64, s: f64| {
        let inv = 1.0 / (2.0 * s * s);
        // floor keeps the map inside (0,1] for arbitrarily far outliers
        r.map(|v| ((-(v as f64 - m).powi(2) * inv).exp() as f32).max(f32::MIN_POSITIVE))
    };
    Ok(SuppressionMaps {
        shadow: affinity(&ls.luminance, mean_l, sigma_l),
        specular: affinity(&ls.saturation, mean_s, sigma_s),
        stats: SuppressionStats {
            mean_l,
            sigma_l,
            mean_s,
            sigma_s,
        },
    })
}

/// Depth gradient magnitude and |Laplacian|, each normalized.
pub fn depth_components(d: &DepthMap) -> Result<Vec<ComponentMap>> {
    let lap = depth_laplacian(d).map(f32::abs);
    Ok(vec![
        ComponentMap::from_raw(ComponentId::DepthGrad, &depth_gradient(d))?,
        ComponentMap::from_raw(ComponentId::DepthLap, &lap)?,
    ])
}

// ---------------------------------------------------------------------------
// patch machinery

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct PatchRecipe {
    pub size: usize,
    pub stride: usize,
    /// Unsigned gradient-orientation histogram bins in the descriptor.
    pub orientation_bins: usize,
}

impl Default for PatchRecipe {
    fn default() -> Self {
        Self {
            size: 8,
            stride: 4,
            orientation_bins: 4,
        }
    }
}

impl PatchRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 || self.stride == 0 || self.stride > self.size {
            return Err(Error::param("patch size must be >= 2 and 0 < stride <= size"));
        }
        if self.orientation_bins == 0 {
            return Err(Error::param("orientation_bins must be >= 1"));
        }
        Ok(())
    }

    pub fn descriptor_dim(&self) -> usize {
        2 + self.orientation_bins
    }

    pub fn pixel_dim(&self) -> usize {
        self.size * self.size
    }
}

fn axis_origins(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=len - size).step_by(stride).collect();
    if *v.last().unwrap() != len - size {
        v.push(len - size);
    }
    v
}

/// Top-left corners of a patch grid that covers every pixel.
pub fn patch_origins(w: usize, h: usize, recipe: &PatchRecipe) -> Result<Vec<(usize, usize)>> {
    recipe.validate()?;
    if w < recipe.size || h < recipe.size {
        return Err(Error::input(format!(
            "image {w}x{h} smaller than patch size {}",
            recipe.size
        )));
    }
    let xs = axis_origins(w, recipe.size, recipe.stride);
    let ys = axis_origins(h, recipe.size, recipe.stride);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect())
}

/// Gray frame with its Sobel derivatives, for repeated descriptor extraction.
pub struct DescriptorSource {
    gray: RasterF32,
    gx: RasterF32,
    gy: RasterF32,
}

impl DescriptorSource {
    pub fn new(gray: &RasterF32) -> Result<Self> {
        gray.require_channels(1)?;
        let (gx, gy) = sobel(gray);
        Ok(Self {
            gray: gray.clone(),
            gx,
            gy,
        })
    }

    pub fn gray(&self) -> &RasterF32 {
        &self.gray
    }

    /// `[mean, std, orientation histogram...]`; histogram bins accumulate
    /// gradient magnitude over [0, pi) divided by the patch pixel count.
    pub fn descriptor(&self, origin: (usize, usize), recipe: &PatchRecipe) -> Vec<f64> {
        let (ox, oy) = origin;
        let n = recipe.pixel_dim() as f64;
        let bins = recipe.orientation_bins;
        let mut out = vec![0f64; 2 + bins];
        let (mut s, mut s2) = (0.0, 0.0);
        for y in oy..oy + recipe.size {
            for x in ox..ox + recipe.size {
                let v = self.gray.get(x, y) as f64;
                s += v;
                s2 += v * v;
                let gx = self.gx.get(x, y) as f64;
                let gy = self.gy.get(x, y) as f64;
                let mag = gx.hypot(gy);
                if mag > 0.0 {
                    let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                    let b = ((theta / std::f64::consts::PI * bins as f64) as usize).min(bins - 1);
                    out[2 + b] += mag / n;
                }
            }
        }
        let mean = s / n;
        out[0] = mean;
        out[1] = (s2 / n - mean * mean).max(0.0).sqrt();
        out
    }

    pub fn pixels(&self, origin: (usize, usize), size: usize) -> Vec<f64> {
        let (ox, oy) = origin;
        let mut v = Vec::with_capacity(size * size);
        for y in oy..oy + size {
            for x in ox..ox + size {
                v.push(self.gray.get(x, y) as f64);
            }
        }
        v
    }
}

/// Averages per-patch values (or per-patch per-pixel values) onto the pixels
/// each patch covers.
fn splat_patches(
    w: usize,
    h: usize,
    size: usize,
    origins: &[(usize, usize)],
    mut value: impl FnMut(usize, usize, usize) -> f64,
) -> RasterF32 {
    let mut acc = vec![0f64; w * h];
    let mut cnt = vec![0u32; w * h];
    for (pi, &(ox, oy)) in origins.iter().enumerate() {
        for dy in 0..size {
            for dx in 0..size {
                let i = (oy + dy) * w + ox + dx;
                acc[i] += value(pi, dx, dy);
                cnt[i] += 1;
            }
        }
    }
    let data = acc
        .iter()
        .zip(&cnt)
        .map(|(a, &c)| if c > 0 { (a / c as f64) as f32 } else { 0.0 })
        .collect();
    RasterF32::from_vec_unchecked(w, h, 1, data)
}

// ---------------------------------------------------------------------------
// patch statistics (Mahalanobis)

/// Default covariance ridge as a fraction of the mean descriptor variance.
pub const DEFAULT_RIDGE_SCALE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct PatchStatsModel {
    pub recipe: PatchRecipe,
    pub mu: Vec<f64>,
    /// Ridged covariance `Sigma + lambda I`.
    pub sigma: Vec<f64>,
    pub ridge: f64,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for PatchStatsModel {
    fn eq(&self, other: &Self) -> bool {
        self.recipe == other.recipe
            && self.mu == other.mu
            && self.sigma == other.sigma
            && self.ridge == other.ridge
    }
}

impl PatchStatsModel {
    /// Fits mean and covariance of `descriptors` with ridge
    /// `ridge_scale * trace(Sigma) / d`. A zero ridge is allowed only while the
    /// covariance stays positive definite; otherwise the default ridge is used.
    pub fn fit_descriptors(
        descriptors: &[Vec<f64>],
        recipe: PatchRecipe,
        ridge_scale: f64,
    ) -> Result<Self> {
        let n = descriptors.len();
        if n < 2 {
            return Err(Error::input("patch statistics need at least two descriptors"));
        }
        let d = descriptors[0].len();
        if descriptors.iter().any(|v| v.len() != d) {
            return Err(Error::input("descriptor dimensions differ"));
        }
        if !(ridge_scale >= 0.0) {
            return Err(Error::param("ridge scale must be >= 0"));
        }
        if n < d + 1 {
            log::warn!("{n} patches for a {d}-dim descriptor; covariance is ridge-dominated");
        }
        let mut mu = vec![0f64; d];
        for v in descriptors {
            for (m, x) in mu.iter_mut().zip(v) {
                *m += x;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for v in descriptors {
            let c = DVector::from_iterator(d, v.iter().zip(&mu).map(|(x, m)| x - m));
            cov.ger(1.0, &c, &c, 1.0);
        }
        cov /= (n - 1) as f64;

        let mean_var = cov.trace() / d as f64;
        let ridge_for = |scale: f64| (scale * mean_var).max(if scale > 0.0 { 1e-12 } else { 0.0 });
        let mut ridge = ridge_for(ridge_scale);
        let mut sigma = &cov + DMatrix::identity(d, d) * ridge;
        let chol = match Cholesky::new(sigma.clone()) {
            Some(c) => c,
            None => {
                let scale = if ridge_scale > 0.0 { ridge_scale * 10.0 } else { DEFAULT_RIDGE_SCALE };
                log::warn!("covariance not positive definite; applying ridge scale {scale}");
                ridge = ridge_for(scale).max(1e-9);
                sigma = &cov + DMatrix::identity(d, d) * ridge;
                Cholesky::new(sigma.clone())
                    .ok_or_else(|| Error::Numerical("ridged covariance is not SPD".into()))?
            }
        };
        Ok(Self {
            recipe,
            mu,
            sigma: sigma.as_slice().to_vec(),
            ridge,
            chol,
        })
    }

    fn from_parts(recipe: PatchRecipe, mu: Vec<f64>, sigma: Vec<f64>, ridge: f64) -> Result<Self> {
        let d = mu.len();
        if sigma.len() != d * d {
            return Err(Error::Format("covariance size mismatch".into()));
        }
        let chol = Cholesky::new(DMatrix::from_column_slice(d, d, &sigma))
            .ok_or_else(|| Error::Format("stored covariance is not SPD".into()))?;
        Ok(Self {
            recipe,
            mu,
            sigma,
            ridge,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `sqrt((f - mu)^T Sigma^-1 (f - mu))` via the Cholesky factor.
    pub fn mahalanobis(&self, f: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.dim(), f.iter().zip(&self.mu).map(|(a, b)| a - b));
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        z.norm()
    }
}

/// Fits patch statistics on every patch of every reference tile.
pub fn fit_patch_stats(
    reference_tiles: &[RasterF32],
    recipe: &PatchRecipe,
    ridge_scale: f64,
) -> Result<PatchStatsModel> {
    let mut descs = Vec::new();
    for tile in reference_tiles {
        let src = DescriptorSource::new(&tile.to_gray())?;
        for o in patch_origins(tile.width(), tile.height(), recipe)? {
            descs.push(src.descriptor(o, recipe));
        }
    }
    PatchStatsModel::fit_descriptors(&descs, *recipe, ridge_scale)
}

/// Fits patch statistics on selected patches of one frame.
pub fn fit_patch_stats_at(
    src: &DescriptorSource,
    origins: &[(usize, usize)],
    recipe: &PatchRecipe,
    ridge_scale: f64,
) -> Result<PatchStatsModel> {
    let descs: Vec<_> = origins.iter().map(|&o| src.descriptor(o, recipe)).collect();
    PatchStatsModel::fit_descriptors(&descs, *recipe, ridge_scale)
}

/// Per-patch Mahalanobis distances averaged onto covered pixels (unnormalized).
pub fn mahalanobis_raw(src: &DescriptorSource, model: &PatchStatsModel) -> Result<RasterF32> {
    let (w, h) = src.gray.dims();
    let origins = patch_origins(w, h, &model.recipe)?;
    let scores: Vec<f64> = origins
        .iter()
        .map(|&o| model.mahalanobis(&src.descriptor(o, &model.recipe)))
        .collect();
    Ok(splat_patches(w, h, model.recipe.size, &origins, |pi, _, _| scores[pi]))
}

pub fn mahalanobis_map(img: &RasterF32, model: &PatchStatsModel) -> Result<ComponentMap> {
    let src = DescriptorSource::new(&img.to_gray())?;
    ComponentMap::from_raw(ComponentId::PatchStats, &mahalanobis_raw(&src, model)?)
}

// ---------------------------------------------------------------------------
// patch PCA reconstruction

#[derive(Debug, Clone, PartialEq)]
pub struct PcaReconModel {
    pub patch_size: usize,
    pub stride: usize,
    pub mean: Vec<f64>,
    /// `k` orthonormal columns of length `patch_size^2`, column-major.
    pub basis: Vec<f64>,
    pub k: usize,
}

impl PcaReconModel {
    pub fn fit(patches: &[Vec<f64>], patch_size: usize, stride: usize, k: usize) -> Result<Self> {
        let dim = patch_size * patch_size;
        if k > dim {
            return Err(Error::param(format!("k={k} exceeds patch dimension {dim}")));
        }
        if patches.is_empty() || patches.iter().any(|p| p.len() != dim) {
            return Err(Error::input("PCA needs non-empty patches of the recipe dimension"));
        }
        let n = patches.len() as f64;
        let mut mean = vec![0f64; dim];
        for p in patches {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for p in patches {
            let c = DVector::from_iterator(dim, p.iter().zip(&mean).map(|(v, m)| v - m));
            cov.ger(1.0, &c, &c, 1.0);
        }
        cov /= n;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let mut basis = Vec::with_capacity(dim * k);
        for &j in order.iter().take(k) {
            let col = eig.eigenvectors.column(j);
            // sign convention: largest-magnitude entry positive
            let pivot = col.iter().copied().fold(0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            let s = if pivot < 0.0 { -1.0 } else { 1.0 };
            basis.extend(col.iter().map(|v| v * s));
        }
        Ok(Self {
            patch_size,
            stride,
            mean,
            basis,
            k,
        })
    }

    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// `mean + B B^T (patch - mean)`.
    pub fn reconstruct(&self, patch: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let centered: Vec<f64> = patch.iter().zip(&self.mean).map(|(p, m)| p - m).collect();
        let mut out = self.mean.clone();
        for j in 0..self.k {
            let col = &self.basis[j * dim..(j + 1) * dim];
            let coef: f64 = col.iter().zip(&centered).map(|(a, b)| a * b).sum();
            for (o, c) in out.iter_mut().zip(col) {
                *o += coef * c;
            }
        }
        out
    }

    fn recipe(&self) -> PatchRecipe {
        PatchRecipe {
            size: self.patch_size,
            stride: self.stride,
            orientation_bins: 1,
        }
    }
}

pub fn fit_patch_pca(reference_tiles: &[RasterF32], recipe: &PatchRecipe, k: usize) -> Result<PcaReconModel> {
    let mut patches = Vec::new();
    for tile in reference_tiles {
        let src = DescriptorSource::new(&tile.to_gray())?;
        for o in patch_origins(tile.width(), tile.height(), recipe)? {
            patches.push(src.pixels(o, recipe.size));
        }
    }
    PcaReconModel::fit(&patches, recipe.size, recipe.stride, k)
}

pub fn fit_patch_pca_at(
    src: &DescriptorSource,
    origins: &[(usize, usize)],
    recipe: &PatchRecipe,
    k: usize,
) -> Result<PcaReconModel> {
    let patches: Vec<_> = origins.iter().map(|&o| src.pixels(o, recipe.size)).collect();
    PcaReconModel::fit(&patches, recipe.size, recipe.stride, k)
}

/// Per-pixel `|I(p) - I_hat(p)|` averaged over all covering patches.
pub fn recon_error_raw(src: &DescriptorSource, model: &PcaReconModel) -> Result<RasterF32> {
    let (w, h) = src.gray.dims();
    let origins = patch_origins(w, h, &model.recipe())?;
    let size = model.patch_size;
    let residuals: Vec<Vec<f64>> = origins
        .iter()
        .map(|&o| {
            let p = src.pixels(o, size);
            let r = model.reconstruct(&p);
            p.iter().zip(&r).map(|(a, b)| (a - b).abs()).collect()
        })
        .collect();
    Ok(splat_patches(w, h, size, &origins, |pi, dx, dy| residuals[pi][dy * size + dx]))
}

pub fn recon_error_map(img: &RasterF32, model: &PcaReconModel) -> Result<ComponentMap> {
    let src = DescriptorSource::new(&img.to_gray())?;
    ComponentMap::from_raw(ComponentId::Recon, &recon_error_raw(&src, model)?)
}

// ---------------------------------------------------------------------------
// APM1 model blob

pub const APM1_MAGIC: &[u8; 4] = b"APM1";
pub const APM1_VERSION: u32 = 1;
const SECTION_PATCH_STATS: u8 = 1;
const SECTION_PCA: u8 = 2;

/// Reference-terrain models fitted once and reused across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModels {
    pub patch_stats: PatchStatsModel,
    pub pca: PcaReconModel,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated APM1 blob".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("bad length".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl ReferenceModels {
    /// Layout: `APM1`, u32 version, u32 section count, then per section
    /// `u8 kind, u32 byte length, payload`; all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Writer(Vec::new());
        out.0.extend_from_slice(APM1_MAGIC);
        out.u32(APM1_VERSION as usize);
        out.u32(2);

        let ps = &self.patch_stats;
        let mut s = Writer(Vec::new());
        s.u32(ps.recipe.size);
        s.u32(ps.recipe.stride);
        s.u32(ps.recipe.orientation_bins);
        s.f64s(&[ps.ridge]);
        s.u32(ps.dim());
        s.f64s(&ps.mu);
        s.f64s(&ps.sigma);
        out.0.push(SECTION_PATCH_STATS);
        out.u32(s.0.len());
        out.0.extend(s.0);

        let pca = &self.pca;
        let mut s = Writer(Vec::new());
        s.u32(pca.patch_size);
        s.u32(pca.stride);
        s.u32(pca.k);
        s.f64s(&pca.mean);
        s.f64s(&pca.basis);
        out.0.push(SECTION_PCA);
        out.u32(s.0.len());
        out.0.extend(s.0);
        out.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != APM1_MAGIC {
            return Err(Error::Format("missing APM1 magic".into()));
        }
        let version = r.u32()?;
        if version != APM1_VERSION as usize {
            return Err(Error::Format(format!("unsupported APM1 version {version}")));
        }
        let sections = r.u32()?;
        let (mut stats, mut pca) = (None, None);
        for _ in 0..sections {
            let kind = r.u8()?;
            let len = r.u32()?;
            let mut s = Reader {
                buf: r.take(len)?,
                pos: 0,
            };
            match kind {
                SECTION_PATCH_STATS => {
                    let recipe = PatchRecipe {
                        size: s.u32()?,
                        stride: s.u32()?,
                        orientation_bins: s.u32()?,
                    };
                    recipe.validate()?;
                    let ridge = s.f64s(1)?[0];
                    let d = s.u32()?;
                    if d != recipe.descriptor_dim() {
                        return Err(Error::Format("descriptor dim does not match recipe".into()));
                    }
                    let mu = s.f64s(d)?;
                    let sigma = s.f64s(d * d)?;
                    stats = Some(PatchStatsModel::from_parts(recipe, mu, sigma, ridge)?);
                }
                SECTION_PCA => {
                    let patch_size = s.u32()?;
                    let stride = s.u32()?;
                    let k = s.u32()?;
                    let dim = patch_size * patch_size;
                    if k > dim || stride == 0 || stride > patch_size {
                        return Err(Error::Format("invalid PCA section header".into()));
                    }
                    let mean = s.f64s(dim)?;
                    let basis = s.f64s(dim * k)?;
                    pca = Some(PcaReconModel {
                        patch_size,
                        stride,
                        mean,
                        basis,
                        k,
                    });
                }
                other => log::warn!("skipping unknown APM1 section kind {other}"),
            }
        }
        match (stats, pca) {
            (Some(patch_stats), Some(pca)) => Ok(Self { patch_stats, pca }),
            _ => Err(Error::Format("APM1 blob lacks a required section".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depthpp::DepthUnit;
    use crate::raster::rgb_to_luma_sat;
    use proptest::prelude::*;

    struct Lcg(u64);
    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (self.0 >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    fn noise(w: usize, h: usize, seed: u64, amp: f64) -> RasterF32 {
        let mut r = Lcg(seed);
        RasterF32::from_fn(w, h, |_, _| (0.5 + amp * (r.next() - 0.5)) as f32)
    }

    #[test]
    fn image_cues_on_constant_are_zero() {
        let c = RasterF32::filled(12, 10, 0.4);
        for m in [
            gradient_magnitude(&c).unwrap(),
            multiscale_laplacian(&c, &[1.0, 2.0]).unwrap(),
            difference_of_gaussians(&c, 1.0, 2.0).unwrap(),
        ] {
            assert!(m.map.data().iter().all(|&v| v == 0.0), "{}", m.name);
        }
    }

    #[test]
    fn gradient_peaks_on_step_edge() {
        let step = RasterF32::from_fn(10, 6, |x, _| if x < 5 { 0.0 } else { 1.0 });
        let g = gradient_magnitude(&step).unwrap();
        for y in 0..6 {
            assert_eq!(g.map.get(4, y), 1.0);
            assert_eq!(g.map.get(5, y), 1.0);
            assert_eq!(g.map.get(1, y), 0.0);
        }
        assert_eq!(g.raw_range, (0.0, 4.0));
    }

    #[test]
    fn gradient_matches_direct_sobel() {
        let img = noise(5, 5, 2, 1.0);
        let g = gradient_magnitude(&img).unwrap();
        let px = |x: i64, y: i64| img.get(x.clamp(0, 4) as usize, y.clamp(0, 4) as usize) as f64;
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let mut raw = vec![];
        for y in 0..5i64 {
            for x in 0..5i64 {
                let (mut gx, mut gy) = (0.0, 0.0);
                for j in 0..3i64 {
                    for i in 0..3i64 {
                        gx += kx[j as usize][i as usize] * px(x + i - 1, y + j - 1);
                        gy += kx[i as usize][j as usize] * px(x + i - 1, y + j - 1);
                    }
                }
                raw.push(f64::hypot(gx, gy));
            }
        }
        let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        for (i, v) in raw.iter().enumerate() {
            assert!((g.map.data()[i] as f64 - (v - lo) / (hi - lo)).abs() < 1e-5);
        }
    }

    #[test]
    fn mslap_single_scale_is_abs_log() {
        let img = noise(16, 16, 3, 1.0);
        let m = multiscale_laplacian(&img, &[1.5]).unwrap();
        let direct = minmax_normalize(&log_response(&img, 1.5)).unwrap();
        assert_eq!(m.map, direct);
        assert!(multiscale_laplacian(&img, &[]).is_err());
    }

    #[test]
    fn mslap_blob_peaks_at_center() {
        // LoG of a Gaussian blob is extremal at its center for every scale
        let (c, s0) = (15.0f64, 2.5f64);
        let blob = RasterF32::from_fn(31, 31, |x, y| {
            let r2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            (-r2 / (2.0 * s0 * s0)).exp() as f32
        });
        let m = multiscale_laplacian(&blob, &[1.5, 3.0]).unwrap();
        let (mut best, mut at) = (f32::MIN, (0, 0));
        for y in 0..31 {
            for x in 0..31 {
                if m.map.get(x, y) > best {
                    best = m.map.get(x, y);
                    at = (x, y);
                }
            }
        }
        assert_eq!(at, (15, 15));
    }

    #[test]
    fn dog_examples() {
        let img = noise(12, 12, 4, 1.0);
        let same = difference_of_gaussians(&img, 1.5, 1.5).unwrap();
        assert!(same.map.data().iter().all(|&v| v == 0.0));
        assert!(difference_of_gaussians(&img, 2.0, 1.0).is_err());

        // impulse response equals |g1 g1^T - g2 g2^T| up to normalization
        let (s1, s2) = (1.0, 2.0);
        let n = 21;
        let imp = RasterF32::from_fn(n, n, |x, y| if (x, y) == (10, 10) { 1.0 } else { 0.0 });
        let dog = difference_of_gaussians(&imp, s1, s2).unwrap();
        let g = |s: f64, d: i64| {
            let r = (3.0 * s).ceil() as i64;
            if d.abs() > r {
                return 0.0;
            }
            let norm: f64 = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * s * s)).exp()).sum();
            (-(d * d) as f64 / (2.0 * s * s)).exp() / norm
        };
        let mut kd = vec![];
        for y in 0..n as i64 {
            for x in 0..n as i64 {
                let (dx, dy) = (x - 10, y - 10);
                kd.push((g(s1, dx) * g(s1, dy) - g(s2, dx) * g(s2, dy)).abs());
            }
        }
        let hi = kd.iter().cloned().fold(0.0, f64::max);
        for (a, b) in dog.map.data().iter().zip(&kd) {
            assert!((*a as f64 - b / hi).abs() < 1e-5);
        }
    }

    fn luma_sat(l: Vec<f32>, w: usize, h: usize) -> LumaSat {
        LumaSat {
            luminance: RasterF32::new(w, h, 1, l).unwrap(),
            saturation: RasterF32::zeros(w, h),
        }
    }

    #[test]
    fn suppression_examples() {
        // L = [0.3, 0.5, 0.7, 0.5]: mean 0.5, population sigma sqrt(0.02)
        let ls = luma_sat(vec![0.3, 0.5, 0.7, 0.5], 2, 2);
        let s = suppression_maps(&ls).unwrap();
        assert!((s.stats.mean_l - 0.5).abs() < 1e-7);
        assert!((s.shadow.get(1, 0) - 1.0).abs() < 1e-6);
        let sigma = s.stats.sigma_l;
        assert!((sigma - 0.02f64.sqrt()).abs() < 1e-7);
        // the 0.3 and 0.7 pixels sit at mean -/+ sqrt(2) sigma
        let expected = (-(0.2f64 / sigma).powi(2) / 2.0).exp();
        assert!((s.shadow.get(0, 0) as f64 - expected).abs() < 1e-5);

        let ls = luma_sat(vec![0.4, 0.6], 2, 1);
        let s = suppression_maps(&ls).unwrap();
        assert!((s.shadow.get(0, 0) as f64 - (-0.5f64).exp()).abs() < 1e-6);
        assert!((s.shadow.get(0, 0) - 0.6065).abs() < 1e-4);

        let s = suppression_maps(&luma_sat(vec![0.2; 9], 3, 3)).unwrap();
        assert_eq!(s.stats.sigma_l, SUPPRESSION_SIGMA_FLOOR);
        assert!(s.shadow.data().iter().all(|&v| v == 1.0));
        assert!(s.specular.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn suppression_values_in_unit_interval() {
        let img = RasterF32::new(4, 4, 3, noise(12, 4, 9, 1.0).into_data()).unwrap();
        let s = suppression_maps(&rgb_to_luma_sat(&img).unwrap()).unwrap();
        for &v in s.shadow.data().iter().chain(s.specular.data()) {
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    fn gaussian_cloud(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = Lcg(seed);
        (0..n)
            .map(|_| (0..d).map(|j| r.next() * (1.0 + j as f64) + 0.3 * j as f64).collect())
            .collect()
    }

    fn recipe_for(d: usize) -> PatchRecipe {
        PatchRecipe {
            orientation_bins: d - 2,
            ..PatchRecipe::default()
        }
    }

    #[test]
    fn mahalanobis_identity_covariance_is_euclidean() {
        let model = PatchStatsModel::from_parts(
            recipe_for(3),
            vec![0.1, 0.2, 0.3],
            DMatrix::<f64>::identity(3, 3).as_slice().to_vec(),
            0.0,
        )
        .unwrap();
        let f = [1.0, -1.0, 0.5];
        let euclid = ((0.9f64).powi(2) + 1.2f64.powi(2) + 0.2f64.powi(2)).sqrt();
        assert!((model.mahalanobis(&f) - euclid).abs() < 1e-12);
        assert_eq!(model.mahalanobis(&[0.1, 0.2, 0.3]), 0.0);
    }

    #[test]
    fn mahalanobis_matches_explicit_inverse() {
        let pts = gaussian_cloud(10, 2, 77);
        let model = PatchStatsModel::fit_descriptors(&pts, recipe_for(2), DEFAULT_RIDGE_SCALE).unwrap();
        // oracle: sample covariance, ridge, closed-form 2x2 inverse
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        let sxx = pts.iter().map(|p| (p[0] - mx).powi(2)).sum::<f64>() / (n - 1.0);
        let syy = pts.iter().map(|p| (p[1] - my).powi(2)).sum::<f64>() / (n - 1.0);
        let sxy = pts.iter().map(|p| (p[0] - mx) * (p[1] - my)).sum::<f64>() / (n - 1.0);
        let lam = 0.01 * (sxx + syy) / 2.0;
        let (a, b, c) = (sxx + lam, sxy, syy + lam);
        let det = a * c - b * b;
        for q in [[0.0, 0.0], [1.0, 2.0], [mx, my], [-0.5, 3.0]] {
            let (dx, dy) = (q[0] - mx, q[1] - my);
            let m2 = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
            assert!((model.mahalanobis(&q) - m2.sqrt()).abs() < 1e-8);
        }
    }

    #[test]
    fn singular_covariance_gets_ridged() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 1.0]).collect();
        let model = PatchStatsModel::fit_descriptors(&pts, recipe_for(3), 0.0).unwrap();
        assert!(model.ridge > 0.0);
        assert!(model.mahalanobis(&[0.0, 0.0, 0.0]).is_finite());
    }

    proptest! {
        #[test]
        fn mahalanobis_affine_invariant(seed in any::<u64>(), scale in 0.2f64..5.0) {
            let d = 3;
            let pts = gaussian_cloud(40, d, seed);
            let mut r = Lcg(seed ^ 0xabcdef);
            let mut a = DMatrix::<f64>::from_fn(d, d, |_, _| r.next() - 0.5);
            a += DMatrix::identity(d, d) * scale;
            prop_assume!(a.determinant().abs() > 0.05);
            let shift: Vec<f64> = (0..d).map(|_| r.next() * 4.0 - 2.0).collect();
            let tf = |v: &[f64]| -> Vec<f64> {
                let y = &a * DVector::from_column_slice(v);
                y.iter().zip(&shift).map(|(p, s)| p + s).collect()
            };
            let m1 = PatchStatsModel::fit_descriptors(&pts, recipe_for(d), 0.0).unwrap();
            let tpts: Vec<_> = pts.iter().map(|p| tf(p)).collect();
            let m2 = PatchStatsModel::fit_descriptors(&tpts, recipe_for(d), 0.0).unwrap();
            prop_assert_eq!(m1.ridge, 0.0);
            prop_assert_eq!(m2.ridge, 0.0);
            for _ in 0..5 {
                let q: Vec<f64> = (0..d).map(|_| r.next() * 3.0 - 1.0).collect();
                let (x, y) = (m1.mahalanobis(&q), m2.mahalanobis(&tf(&q)));
                prop_assert!((x - y).abs() < 1e-6 * x.max(1.0), "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn mahalanobis_map_flags_odd_patch() {
        let recipe = PatchRecipe::default();
        let tiles = vec![noise(32, 32, 1, 0.1), noise(32, 32, 2, 0.1)];
        let model = fit_patch_stats(&tiles, &recipe, DEFAULT_RIDGE_SCALE).unwrap();
        let mut img = noise(40, 40, 3, 0.1);
        for y in 16..24 {
            for x in 16..24 {
                img.set(x, y, if (x + y) % 2 == 0 { 1.0 } else { 0.0 });
            }
        }
        let m = mahalanobis_map(&img, &model).unwrap();
        assert_eq!(m.map.get(20, 20), 1.0);
        assert!(m.map.get(2, 2) < 0.2);
    }

    fn pca_tiles() -> Vec<RasterF32> {
        // smooth ramps plus mild noise: low intrinsic dimension
        (0..4)
            .map(|t| {
                let mut r = Lcg(100 + t);
                RasterF32::from_fn(24, 24, |x, y| {
                    (0.3 + 0.01 * x as f64 + 0.005 * (t as f64 + 1.0) * y as f64 + 0.05 * r.next()) as f32
                })
            })
            .collect()
    }

    #[test]
    fn pca_complete_basis_zero_error() {
        let recipe = PatchRecipe { size: 4, stride: 2, orientation_bins: 4 };
        let model = fit_patch_pca(&pca_tiles(), &recipe, 16).unwrap();
        let src = DescriptorSource::new(&noise(16, 16, 5, 1.0)).unwrap();
        let err = recon_error_raw(&src, &model).unwrap();
        assert!(err.data().iter().all(|&v| v < 1e-5));
        assert!(fit_patch_pca(&pca_tiles(), &recipe, 17).is_err());
    }

    #[test]
    fn pca_basis_orthonormal() {
        let recipe = PatchRecipe { size: 4, stride: 2, orientation_bins: 4 };
        let model = fit_patch_pca(&pca_tiles(), &recipe, 6).unwrap();
        let dim = model.dim();
        for i in 0..6 {
            for j in 0..6 {
                let dot: f64 = (0..dim)
                    .map(|t| model.basis[i * dim + t] * model.basis[j * dim + t])
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pca_k0_is_distance_to_mean() {
        let recipe = PatchRecipe { size: 4, stride: 4, orientation_bins: 4 };
        let model = fit_patch_pca(&pca_tiles(), &recipe, 0).unwrap();
        let img = noise(8, 8, 6, 1.0);
        let src = DescriptorSource::new(&img).unwrap();
        let err = recon_error_raw(&src, &model).unwrap();
        // stride == size: one patch per pixel
        for y in 0..8 {
            for x in 0..8 {
                let m = model.mean[(y % 4) * 4 + x % 4];
                assert!((err.get(x, y) as f64 - (img.get(x, y) as f64 - m).abs()).abs() < 1e-6);
            }
        }
    }

    fn mean_patch_error(model: &PcaReconModel, tiles: &[RasterF32]) -> f64 {
        let recipe = PatchRecipe { size: model.patch_size, stride: model.stride, orientation_bins: 1 };
        let mut total = 0.0;
        let mut n = 0.0;
        for t in tiles {
            let src = DescriptorSource::new(t).unwrap();
            for o in patch_origins(t.width(), t.height(), &recipe).unwrap() {
                let p = src.pixels(o, recipe.size);
                let r = model.reconstruct(&p);
                total += p.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                n += 1.0;
            }
        }
        total / n
    }

    #[test]
    fn pca_reference_error_below_held_out() {
        let recipe = PatchRecipe { size: 6, stride: 3, orientation_bins: 4 };
        let train = pca_tiles();
        let model = fit_patch_pca(&train, &recipe, 4).unwrap();
        let held_out = vec![noise(24, 24, 42, 0.4), noise(24, 24, 43, 0.4)];
        assert!(mean_patch_error(&model, &train) <= mean_patch_error(&model, &held_out));
    }

    #[test]
    fn pca_error_nonincreasing_in_k() {
        let recipe = PatchRecipe { size: 4, stride: 2, orientation_bins: 4 };
        let train = pca_tiles();
        let eval = vec![noise(16, 16, 7, 0.5)];
        let mut prev = f64::INFINITY;
        for k in 0..=16 {
            let e = mean_patch_error(&fit_patch_pca(&train, &recipe, k).unwrap(), &eval);
            assert!(e <= prev + 1e-9, "k={k}: {e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn depth_component_examples() {
        let c = DepthMap::new(RasterF32::filled(8, 8, 3.0), DepthUnit::Meters).unwrap();
        for m in depth_components(&c).unwrap() {
            assert!(m.map.data().iter().all(|&v| v == 0.0));
        }
        let plane = DepthMap::new(
            RasterF32::from_fn(8, 8, |x, y| 2.0 + 0.25 * x as f32 + 0.5 * y as f32),
            DepthUnit::Meters,
        )
        .unwrap();
        let comps = depth_components(&plane).unwrap();
        assert!(comps[0].map.data().iter().all(|&v| v == 0.0));

        // cliff between columns 5 and 6
        let cliff = DepthMap::new(
            RasterF32::from_fn(12, 8, |x, _| if x < 6 { 2.0 } else { 5.0 }),
            DepthUnit::Meters,
        )
        .unwrap();
        let comps = depth_components(&cliff).unwrap();
        for m in &comps {
            for y in 0..8 {
                assert_eq!(m.map.get(5, y), 1.0, "{}", m.name);
                assert_eq!(m.map.get(6, y), 1.0, "{}", m.name);
                assert_eq!(m.map.get(1, y), 0.0);
            }
        }
    }

    #[test]
    fn apm1_roundtrip_and_rejects_garbage() {
        let recipe = PatchRecipe::default();
        let tiles = vec![noise(24, 24, 1, 0.3)];
        let models = ReferenceModels {
            patch_stats: fit_patch_stats(&tiles, &recipe, DEFAULT_RIDGE_SCALE).unwrap(),
            pca: fit_patch_pca(&tiles, &recipe, 5).unwrap(),
        };
        let bytes = models.to_bytes();
        assert_eq!(&bytes[..4], b"APM1");
        assert_eq!(ReferenceModels::from_bytes(&bytes).unwrap(), models);
        assert!(ReferenceModels::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ReferenceModels::from_bytes(&bad).is_err());
    }

    #[test]
    fn component_id_strings() {
        for c in ComponentId::ALL {
            assert_eq!(c.as_str().parse::<ComponentId>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{}\"", c.as_str()));
        }
        assert!("texture".parse::<ComponentId>().is_err());
    }
}
