//! Region features, the linear curiosity score with nonnegative weights,
//! per-region uncertainty and ranking.

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::depthpp::{depth_gradient, DepthMap};
use crate::error::{Error, Result};
use crate::features::{ComponentId, ComponentMap};
use crate::localize::RegionHypothesis;
use crate::metrics::ndcg_at_k;
use crate::raster::RasterF32;
use crate::rng::Lcg;

pub const FEATURE_COUNT: usize = 5;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = ["s_known", "s_recon", "s_anom", "depth_var", "roughness"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatures {
    pub s_known: f64,
    pub s_recon: f64,
    pub s_anom: f64,
    pub depth_var: f64,
    pub roughness: f64,
    pub depth_available: bool,
}

impl RegionFeatures {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [self.s_known, self.s_recon, self.s_anom, self.depth_var, self.roughness]
    }
}

/// Per-frame rasters the region features are averaged from.
pub struct FeatureSources {
    /// Raw per-pixel reconstruction error `|I - I_hat|`.
    pub recon_err: RasterF32,
    pub fused: RasterF32,
    pub depth: Option<DepthMap>,
    depth_grad: Option<RasterF32>,
}

impl FeatureSources {
    pub fn new(recon_err: RasterF32, fused: RasterF32, depth: Option<DepthMap>) -> Result<Self> {
        recon_err.require_same_dims(&fused)?;
        if let Some(d) = &depth {
            d.raster.require_same_dims(&fused)?;
        }
        let depth_grad = depth.as_ref().map(depth_gradient);
        Ok(Self {
            recon_err,
            fused,
            depth,
            depth_grad,
        })
    }
}

fn mean_over(map: &RasterF32, pixels: &[usize]) -> f64 {
    let d = map.data();
    pixels.iter().map(|&i| d[i] as f64).sum::<f64>() / pixels.len() as f64
}

/// Means over the region pixel set; depth terms use valid depth pixels only
/// and are 0 (with `depth_available = false`) without depth.
pub fn compute_region_features(pixels: &[usize], s_known: f64, src: &FeatureSources) -> Result<RegionFeatures> {
    if pixels.is_empty() {
        return Err(Error::input("empty region"));
    }
    let n = src.fused.len_pixels();
    if pixels.iter().any(|&i| i >= n) {
        return Err(Error::input("region pixel outside the frame"));
    }
    let (mut depth_var, mut roughness, mut depth_available) = (0.0, 0.0, false);
    if let (Some(d), Some(g)) = (&src.depth, &src.depth_grad) {
        let valid: Vec<usize> = pixels.iter().copied().filter(|&i| d.is_valid(i)).collect();
        if !valid.is_empty() {
            depth_available = true;
            let m = mean_over(&d.raster, &valid);
            let data = d.raster.data();
            depth_var = valid.iter().map(|&i| (data[i] as f64 - m).powi(2)).sum::<f64>() / valid.len() as f64;
            roughness = mean_over(g, &valid);
        }
    }
    Ok(RegionFeatures {
        s_known,
        s_recon: mean_over(&src.recon_err, pixels),
        s_anom: mean_over(&src.fused, pixels),
        depth_var,
        roughness,
        depth_available,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum KnownValueConfig {
    /// Same prior for every region.
    Constant { value: f64 },
    /// Mean of a per-pixel confidence raster supplied with the frame.
    Sidecar,
}

impl Default for KnownValueConfig {
    fn default() -> Self {
        KnownValueConfig::Constant { value: 0.5 }
    }
}

pub fn known_value_provider(
    pixels: &[usize],
    cfg: &KnownValueConfig,
    sidecar: Option<&RasterF32>,
) -> Result<f64> {
    if pixels.is_empty() {
        return Err(Error::input("empty region"));
    }
    match cfg {
        KnownValueConfig::Constant { value } => Ok(value.clamp(0.0, 1.0)),
        KnownValueConfig::Sidecar => {
            let s = sidecar.ok_or_else(|| Error::input("known-value sidecar raster required but not supplied"))?;
            Ok(mean_over(s, pixels).clamp(0.0, 1.0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CuriosityModel {
    pub alpha: [f64; FEATURE_COUNT],
    pub lambda: f64,
    pub norm_mode: NormMode,
    /// Per-feature `[min, max]` from the training set.
    pub feature_ranges: [[f64; 2]; FEATURE_COUNT],
}

impl Default for CuriosityModel {
    fn default() -> Self {
        Self {
            alpha: [0.2; FEATURE_COUNT],
            lambda: 0.0,
            norm_mode: NormMode::MinMax,
            feature_ranges: [[0.0, 1.0], [0.0, 0.2], [0.0, 1.0], [0.0, 0.05], [0.0, 0.2]],
        }
    }
}

impl CuriosityModel {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::param("curiosity weights must be finite and >= 0"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param("lambda must be >= 0"));
        }
        if self
            .feature_ranges
            .iter()
            .any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi))
        {
            return Err(Error::param("feature ranges must be finite with min <= max"));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

/// Min-max with the stored training ranges, clamped to [0,1]; a degenerate
/// range maps to 0.
pub fn normalize_features(f: &RegionFeatures, model: &CuriosityModel) -> [f64; FEATURE_COUNT] {
    let raw = f.to_array();
    let mut x = [0.0; FEATURE_COUNT];
    for k in 0..FEATURE_COUNT {
        let [lo, hi] = model.feature_ranges[k];
        x[k] = if hi > lo { ((raw[k] - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    }
    x
}

pub fn score(x: &[f64; FEATURE_COUNT], model: &CuriosityModel) -> f64 {
    x.iter().zip(&model.alpha).map(|(a, b)| a * b).sum()
}

pub const NNLS_TOL: f64 = 1e-8;
pub const NNLS_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub alpha: [f64; FEATURE_COUNT],
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `|X a - y|^2 + lambda |a|^2` over `a >= 0` by projected gradient
/// from zero with step `1/L`, `L` a Gershgorin bound on `X^T X + lambda I`.
pub fn train_weights(xs: &[[f64; FEATURE_COUNT]], ys: &[f64], lambda: f64) -> Result<TrainResult> {
    if xs.len() != ys.len() {
        return Err(Error::input("feature and target counts differ"));
    }
    if xs.len() < FEATURE_COUNT {
        return Err(Error::input(format!("need at least {FEATURE_COUNT} examples, got {}", xs.len())));
    }
    if ys.iter().chain(xs.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::input("training data must be finite"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::param("lambda must be >= 0"));
    }
    let mut q = [[0.0; FEATURE_COUNT]; FEATURE_COUNT];
    let mut b = [0.0; FEATURE_COUNT];
    for (x, &y) in xs.iter().zip(ys) {
        for i in 0..FEATURE_COUNT {
            b[i] += x[i] * y;
            for j in 0..FEATURE_COUNT {
                q[i][j] += x[i] * x[j];
            }
        }
    }
    for (i, row) in q.iter_mut().enumerate() {
        row[i] += lambda;
    }
    let lip = q.iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut alpha = [0.0; FEATURE_COUNT];
    if lip == 0.0 {
        return Ok(TrainResult { alpha, iterations: 0, converged: true });
    }
    let step = 1.0 / lip;
    for it in 1..=NNLS_MAX_ITERS {
        let mut delta: f64 = 0.0;
        let mut next = [0.0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            let g: f64 = (0..FEATURE_COUNT).map(|j| q[i][j] * alpha[j]).sum::<f64>() - b[i];
            next[i] = (alpha[i] - step * g).max(0.0);
            delta = delta.max((next[i] - alpha[i]).abs());
        }
        alpha = next;
        if delta < NNLS_TOL {
            return Ok(TrainResult { alpha, iterations: it, converged: true });
        }
    }
    log::warn!("nonnegative ridge did not converge in {NNLS_MAX_ITERS} iterations");
    Ok(TrainResult { alpha, iterations: NNLS_MAX_ITERS, converged: false })
}

/// One labeled region for training: raw features, relevance on a 0-3 scale,
/// and the frame it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub frame: String,
    pub region_id: u32,
    pub features: RegionFeatures,
    pub relevance: f64,
}

/// Max relevance grade; targets are `relevance / RELEVANCE_MAX`.
pub const RELEVANCE_MAX: f64 = 3.0;

pub fn feature_ranges(examples: &[TrainingExample]) -> [[f64; 2]; FEATURE_COUNT] {
    let mut r = [[f64::INFINITY, f64::NEG_INFINITY]; FEATURE_COUNT];
    for e in examples {
        for (k, v) in e.features.to_array().into_iter().enumerate() {
            r[k][0] = r[k][0].min(v);
            r[k][1] = r[k][1].max(v);
        }
    }
    r
}

/// Freezes normalization ranges from `examples` and fits nonnegative weights.
pub fn fit_model(examples: &[TrainingExample], lambda: f64) -> Result<(CuriosityModel, TrainResult)> {
    if examples.is_empty() {
        return Err(Error::input("no training examples"));
    }
    let mut model = CuriosityModel {
        alpha: [0.0; FEATURE_COUNT],
        lambda,
        norm_mode: NormMode::MinMax,
        feature_ranges: feature_ranges(examples),
    };
    let xs: Vec<_> = examples.iter().map(|e| normalize_features(&e.features, &model)).collect();
    let ys: Vec<_> = examples.iter().map(|e| e.relevance / RELEVANCE_MAX).collect();
    let res = train_weights(&xs, &ys, lambda)?;
    model.alpha = res.alpha;
    Ok((model, res))
}

/// Mean nDCG over frames, each frame's regions ranked by the model score.
pub fn mean_ndcg(model: &CuriosityModel, examples: &[TrainingExample]) -> f64 {
    let mut frames: BTreeMap<&str, Vec<(f64, u32, f64)>> = BTreeMap::new();
    for e in examples {
        let c = score(&normalize_features(&e.features, model), model);
        frames.entry(&e.frame).or_default().push((c, e.region_id, e.relevance));
    }
    if frames.is_empty() {
        return 0.0;
    }
    let total: f64 = frames
        .values_mut()
        .map(|v| {
            v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let gains: Vec<f64> = v.iter().map(|t| t.2).collect();
            ndcg_at_k(&gains, gains.len()).unwrap_or(0.0)
        })
        .sum();
    total / frames.len() as f64
}

/// Parses `start:end:n` into `n` geometrically spaced values.
pub fn parse_lambda_sweep(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::input(format!("lambda sweep '{spec}' is not start:end:n with positive bounds"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) || n == 0 {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    let (la, lb) = (a.ln(), b.ln());
    Ok((0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub alpha: [f64; FEATURE_COUNT],
    pub alpha_norm: f64,
    pub validation_ndcg: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub best_lambda: f64,
    pub validation_frames: Vec<String>,
}

/// Seeded frame-level split: about `val_fraction` of frames (at least one when
/// there are two or more) are held out.
pub fn split_frames(examples: &[TrainingExample], val_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut frames: Vec<String> = examples.iter().map(|e| e.frame.clone()).collect();
    frames.sort();
    frames.dedup();
    Lcg::new(seed).shuffle(&mut frames);
    let mut n_val = (frames.len() as f64 * val_fraction).round() as usize;
    if frames.len() >= 2 {
        n_val = n_val.clamp(1, frames.len() - 1);
    } else {
        n_val = 0;
    }
    let val = frames[..n_val].to_vec();
    let train = frames[n_val..].to_vec();
    (train, val)
}

/// Fits on the training frames for every lambda and scores held-out nDCG;
/// ties in nDCG go to the larger lambda.
pub fn sweep_lambda(examples: &[TrainingExample], lambdas: &[f64], val_fraction: f64, seed: u64) -> Result<SweepResult> {
    if lambdas.is_empty() {
        return Err(Error::input("empty lambda sweep"));
    }
    let (train_frames, val_frames) = split_frames(examples, val_fraction, seed);
    let train: Vec<_> = examples.iter().filter(|e| train_frames.contains(&e.frame)).cloned().collect();
    let val: Vec<_> = examples.iter().filter(|e| val_frames.contains(&e.frame)).cloned().collect();
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let (model, res) = fit_model(&train, lambda)?;
        let scored = if val.is_empty() { &train } else { &val };
        points.push(SweepPoint {
            lambda,
            alpha: model.alpha,
            alpha_norm: model.alpha.iter().map(|a| a * a).sum::<f64>().sqrt(),
            validation_ndcg: mean_ndcg(&model, scored),
            converged: res.converged,
        });
    }
    let best = points
        .iter()
        .max_by(|a, b| a.validation_ndcg.total_cmp(&b.validation_ndcg).then(a.lambda.total_cmp(&b.lambda)))
        .unwrap();
    Ok(SweepResult {
        best_lambda: best.lambda,
        points,
        validation_frames: val_frames,
    })
}

/// Population standard deviation of the per-component region means.
pub fn uncertainty(component_means: &[f64]) -> f64 {
    if component_means.is_empty() {
        return 0.0;
    }
    let n = component_means.len() as f64;
    let m = component_means.iter().sum::<f64>() / n;
    (component_means.iter().map(|s| (s - m).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRegion {
    pub hypothesis: RegionHypothesis,
    pub features: RegionFeatures,
    pub normalized: [f64; FEATURE_COUNT],
    pub curiosity: f64,
    pub uncertainty: f64,
    /// Mean of every fused component inside the region.
    pub diagnostics: BTreeMap<ComponentId, f64>,
}

pub fn region_diagnostics(pixels: &[usize], components: &[ComponentMap]) -> BTreeMap<ComponentId, f64> {
    components
        .iter()
        .map(|c| (c.name, mean_over(&c.map, pixels)))
        .collect()
}

pub fn score_region(
    hypothesis: RegionHypothesis,
    features: RegionFeatures,
    diagnostics: BTreeMap<ComponentId, f64>,
    model: &CuriosityModel,
) -> ScoredRegion {
    let normalized = normalize_features(&features, model);
    let means: Vec<f64> = diagnostics.values().copied().collect();
    ScoredRegion {
        hypothesis,
        features,
        curiosity: score(&normalized, model),
        normalized,
        uncertainty: uncertainty(&means),
        diagnostics,
    }
}

/// Descending curiosity; ties by lower uncertainty, then lower id.
pub fn rank_regions(mut scored: Vec<ScoredRegion>) -> Vec<ScoredRegion> {
    scored.sort_by(|a, b| {
        b.curiosity
            .total_cmp(&a.curiosity)
            .then(a.uncertainty.total_cmp(&b.uncertainty))
            .then(a.hypothesis.id.cmp(&b.hypothesis.id))
    });
    scored
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depthpp::DepthUnit;
    use crate::localize::RotatedBox;
    use proptest::prelude::*;

    fn sources(fused: RasterF32, depth: Option<RasterF32>) -> FeatureSources {
        let (w, h) = fused.dims();
        FeatureSources::new(
            RasterF32::filled(w, h, 0.1),
            fused,
            depth.map(|d| DepthMap::new(d, DepthUnit::Meters).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn feature_examples() {
        let src = sources(RasterF32::filled(4, 4, 0.5), Some(RasterF32::filled(4, 4, 2.0)));
        let f = compute_region_features(&[5, 6, 9, 10], 0.3, &src).unwrap();
        assert_eq!((f.depth_var, f.roughness), (0.0, 0.0));
        assert_eq!(f.s_anom, 0.5);
        assert!((f.s_recon - 0.1).abs() < 1e-7);
        assert_eq!(f.s_known, 0.3);
        assert!(f.depth_available);

        let d = RasterF32::new(2, 2, 1, vec![1.0, 1.0, 2.0, 2.0]).unwrap();
        let src = sources(RasterF32::zeros(2, 2), Some(d));
        let f = compute_region_features(&[0, 1, 2, 3], 0.0, &src).unwrap();
        assert!((f.depth_var - 0.25).abs() < 1e-12);

        let src = sources(RasterF32::zeros(2, 2), None);
        let f = compute_region_features(&[0], 0.0, &src).unwrap();
        assert!(!f.depth_available && f.depth_var == 0.0);
        assert!(compute_region_features(&[], 0.0, &src).is_err());
    }

    #[test]
    fn known_value_examples() {
        let c = KnownValueConfig::Constant { value: 0.5 };
        assert_eq!(known_value_provider(&[0, 1], &c, None).unwrap(), 0.5);
        let ones = RasterF32::filled(2, 2, 1.0);
        assert_eq!(known_value_provider(&[0, 3], &KnownValueConfig::Sidecar, Some(&ones)).unwrap(), 1.0);
        let half = RasterF32::new(2, 2, 1, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(known_value_provider(&[0, 1, 2, 3], &KnownValueConfig::Sidecar, Some(&half)).unwrap(), 0.5);
        assert!(known_value_provider(&[0], &KnownValueConfig::Sidecar, None).is_err());
    }

    fn feats(v: [f64; 5]) -> RegionFeatures {
        RegionFeatures {
            s_known: v[0],
            s_recon: v[1],
            s_anom: v[2],
            depth_var: v[3],
            roughness: v[4],
            depth_available: true,
        }
    }

    #[test]
    fn normalize_and_score_examples() {
        let m = CuriosityModel::default();
        let lo = feats([0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(normalize_features(&lo, &m), [0.0; 5]);
        let hi = feats([1.0, 0.2, 1.0, 0.05, 0.2]);
        assert_eq!(normalize_features(&hi, &m), [1.0; 5]);
        let out = feats([2.0, -1.0, 0.5, 9.0, 0.1]);
        assert_eq!(normalize_features(&out, &m), [1.0, 0.0, 0.5, 1.0, 0.5]);

        assert_eq!(score(&[0.0; 5], &m), 0.0);
        assert!((score(&[1.0; 5], &m) - 1.0).abs() < 1e-12);
        let mut e2 = m.clone();
        e2.alpha = [0.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(score(&[0.1, 0.2, 0.3, 0.4, 0.5], &e2), 0.3);
    }

    proptest! {
        #[test]
        fn score_is_linear(x in prop::array::uniform5(0.0f64..1.0), y in prop::array::uniform5(0.0f64..1.0),
                           a in 0.0f64..3.0, b in 0.0f64..3.0, al in prop::array::uniform5(0.0f64..1.0)) {
            let m = CuriosityModel { alpha: al, ..Default::default() };
            let mut z = [0.0; 5];
            for k in 0..5 {
                z[k] = a * x[k] + b * y[k];
            }
            prop_assert!((score(&z, &m) - (a * score(&x, &m) + b * score(&y, &m))).abs() < 1e-9);
        }
    }

    fn design(n: usize, seed: u64) -> Vec<[f64; 5]> {
        let mut r = Lcg::new(seed);
        (0..n).map(|_| [0; 5].map(|_| r.next_f64())).collect()
    }

    #[test]
    fn nnls_recovers_planted_weights() {
        let xs = design(200, 11);
        let truth = [0.4, 0.0, 1.3, 0.25, 0.7];
        let ys: Vec<f64> = xs.iter().map(|x| x.iter().zip(&truth).map(|(a, b)| a * b).sum()).collect();
        let r = train_weights(&xs, &ys, 1e-6).unwrap();
        assert!(r.converged);
        for k in 0..5 {
            assert!(r.alpha[k] >= 0.0);
            assert!((r.alpha[k] - truth[k]).abs() <= 0.01 * truth[k].max(0.01), "{k}: {:?}", r.alpha);
        }
    }

    #[test]
    fn nnls_shrinks_and_isolates() {
        let xs = design(50, 3);
        let mut r = Lcg::new(5);
        let ys: Vec<f64> = (0..50).map(|_| r.next_f64() - 0.5).collect();
        let big = train_weights(&xs, &ys, 1e6).unwrap();
        assert!(big.alpha.iter().all(|&a| a < 1e-6));

        // single active column: 1-D ridge y.x / (x.x + lambda)
        let xs1: Vec<[f64; 5]> = xs.iter().map(|x| [0.0, 0.0, x[2], 0.0, 0.0]).collect();
        let ys1: Vec<f64> = xs1.iter().enumerate().map(|(i, x)| 0.8 * x[2] + 0.01 * (i % 3) as f64).collect();
        let lam = 0.5;
        let res = train_weights(&xs1, &ys1, lam).unwrap();
        let xy: f64 = xs1.iter().zip(&ys1).map(|(x, y)| x[2] * y).sum();
        let xx: f64 = xs1.iter().map(|x| x[2] * x[2]).sum();
        assert!((res.alpha[2] - xy / (xx + lam)).abs() < 1e-6);
        for k in [0, 1, 3, 4] {
            assert_eq!(res.alpha[k], 0.0);
        }
        assert!(train_weights(&xs[..4], &ys[..4], 0.1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn nnls_weights_nonnegative(seed in any::<u64>(), lam in 0.0f64..10.0) {
            let xs = design(20, seed);
            let mut r = Lcg::new(seed ^ 1);
            let ys: Vec<f64> = (0..20).map(|_| r.next_f64() * 2.0 - 1.0).collect();
            let res = train_weights(&xs, &ys, lam).unwrap();
            prop_assert!(res.alpha.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(uncertainty(&[0.3, 0.3, 0.3]), 0.0);
        assert!((uncertainty(&[0.0, 1.0]) - 0.5).abs() < 1e-12);
        assert_eq!(uncertainty(&[0.7]), 0.0);
        assert_eq!(uncertainty(&[0.1, 0.5, 0.9]), uncertainty(&[0.9, 0.1, 0.5]));
    }

    fn scored(id: u32, c: f64, u: f64) -> ScoredRegion {
        ScoredRegion {
            hypothesis: RegionHypothesis::new(id, RotatedBox::new(0.0, 0.0, 2.0, 1.0, 0.0), 0.5, id),
            features: feats([0.0; 5]),
            normalized: [0.0; 5],
            curiosity: c,
            uncertainty: u,
            diagnostics: BTreeMap::new(),
        }
    }

    #[test]
    fn ranking_examples() {
        let ids = |v: &[ScoredRegion]| v.iter().map(|s| s.hypothesis.id).collect::<Vec<_>>();
        let r = rank_regions(vec![scored(1, 0.2, 0.0), scored(2, 0.9, 0.0), scored(3, 0.5, 0.0)]);
        assert_eq!(ids(&r), vec![2, 3, 1]);
        let r = rank_regions(vec![scored(1, 0.5, 0.3), scored(2, 0.5, 0.1)]);
        assert_eq!(ids(&r), vec![2, 1]);
        let base = vec![scored(1, 0.5, 0.1), scored(2, 0.5, 0.1), scored(3, 0.7, 0.2), scored(4, 0.1, 0.0)];
        let mut perm = base.clone();
        perm.reverse();
        perm.swap(0, 2);
        assert_eq!(ids(&rank_regions(base)), ids(&rank_regions(perm)));
    }

    #[test]
    fn lambda_sweep_parsing() {
        let v = parse_lambda_sweep("0.001:10:5").unwrap();
        assert_eq!(v.len(), 5);
        assert!((v[0] - 0.001).abs() < 1e-15 && (v[4] - 10.0).abs() < 1e-12);
        assert!((v[2] - 0.1).abs() < 1e-12);
        assert!(parse_lambda_sweep("0:1:3").is_err());
        assert!(parse_lambda_sweep("1:2").is_err());
    }

    #[test]
    fn sweep_alpha_norm_nonincreasing() {
        let mut r = Lcg::new(9);
        let examples: Vec<TrainingExample> = (0..60)
            .map(|i| {
                let f = feats([0; 5].map(|_| r.next_f64()));
                let rel = (3.0 * (0.6 * f.s_anom + 0.4 * f.roughness)).round();
                TrainingExample { frame: format!("f{}", i / 6), region_id: (i % 6) as u32 + 1, features: f, relevance: rel }
            })
            .collect();
        let res = sweep_lambda(&examples, &parse_lambda_sweep("0.01:100:5").unwrap(), 0.3, 1).unwrap();
        let norms: Vec<f64> = res.points.iter().map(|p| p.alpha_norm).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{norms:?}");
        assert!(!res.validation_frames.is_empty());
        let json = serde_json::to_string(&fit_model(&examples, 0.1).unwrap().0).unwrap();
        assert!(json.contains("\"norm_mode\":\"min_max\""));
        CuriosityModel::from_json(&json).unwrap();
    }
}
