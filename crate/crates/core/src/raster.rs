//! Row-major float rasters and the color/normalization/resampling primitives
//! shared by every pipeline stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator guard for HSV-style saturation at black pixels.
pub const SATURATION_EPS: f32 = 1e-6;

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// A row-major, channel-interleaved float raster with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterF32 {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RasterF32 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input(format!("empty raster {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::input(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::input(format!(
                "data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel raster filled with `value`.
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0 && value.is_finite());
        Self {
            width,
            height,
            channels: 1,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Builds a single-channel raster from a per-pixel function.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_vec_unchecked(width, height, 1, data)
    }

    /// Internal constructor for data produced by trusted arithmetic; debug-checks finiteness.
    pub(crate) fn from_vec_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels]
    }

    #[inline]
    pub fn get_c(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Sample with coordinates clamped to the raster (replicate border).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels] = v;
    }

    pub fn require_channels(&self, expected: usize) -> Result<()> {
        if self.channels != expected {
            return Err(Error::ChannelCount {
                expected,
                got: self.channels,
            });
        }
        Ok(())
    }

    pub fn require_same_dims(&self, other: &RasterF32) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }

    /// Applies `f` to every sample.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::from_vec_unchecked(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Extracts one channel as a single-channel raster.
    pub fn channel(&self, c: usize) -> Self {
        assert!(c < self.channels);
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        Self::from_vec_unchecked(self.width, self.height, 1, data)
    }

    /// Interleaves three single-channel rasters of equal size.
    pub fn from_channels(r: &Self, g: &Self, b: &Self) -> Result<Self> {
        r.require_same_dims(g)?;
        r.require_same_dims(b)?;
        let mut data = Vec::with_capacity(r.len_pixels() * 3);
        for i in 0..r.len_pixels() {
            data.push(r.data[i]);
            data.push(g.data[i]);
            data.push(b.data[i]);
        }
        Ok(Self::from_vec_unchecked(r.width, r.height, 3, data))
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Grayscale via Rec.601 weights; single-channel rasters are returned as-is.
    pub fn to_gray(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| {
                (LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
                    .clamp(0.0, 1.0)
            })
            .collect();
        Self::from_vec_unchecked(self.width, self.height, 1, data)
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Luminance and saturation channels of an RGB frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaSat {
    pub luminance: RasterF32,
    pub saturation: RasterF32,
}

/// Min-max normalization to [0,1]. A constant map normalizes to all zeros.
pub fn minmax_normalize(map: &RasterF32) -> Result<RasterF32> {
    map.require_channels(1)?;
    if let Some(i) = map.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let (lo, hi) = map.min_max();
    Ok(normalize_with_range(map, lo, hi))
}

pub(crate) fn normalize_with_range(map: &RasterF32, lo: f32, hi: f32) -> RasterF32 {
    if hi <= lo {
        return RasterF32::from_vec_unchecked(
            map.width,
            map.height,
            map.channels,
            vec![0.0; map.data.len()],
        );
    }
    let span = hi - lo;
    map.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
}

/// Splits an RGB raster into Rec.601 luminance and HSV-style saturation.
pub fn rgb_to_luma_sat(img: &RasterF32) -> Result<LumaSat> {
    img.require_channels(3)?;
    let n = img.len_pixels();
    let mut lum = Vec::with_capacity(n);
    let mut sat = Vec::with_capacity(n);
    for px in img.data.chunks_exact(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let l = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b;
        let mx = r.max(g).max(b);
        let mn = r.min(g).min(b);
        lum.push(l.clamp(0.0, 1.0));
        sat.push(((mx - mn) / (mx + SATURATION_EPS)).clamp(0.0, 1.0));
    }
    Ok(LumaSat {
        luminance: RasterF32::from_vec_unchecked(img.width, img.height, 1, lum),
        saturation: RasterF32::from_vec_unchecked(img.width, img.height, 1, sat),
    })
}

/// Keys cubic convolution kernel with a = -0.5 (Catmull-Rom).
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-coordinate source taps (4 indices + 4 weights), pixel-center aligned.
fn cubic_taps(src_len: usize, dst_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| {
            let s = (i as f64 + 0.5) * scale - 0.5;
            let base = s.floor();
            let frac = s - base;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for k in 0..4 {
                let off = k as f64 - 1.0;
                idx[k] = (base as isize + k as isize - 1).clamp(0, src_len as isize - 1) as usize;
                w[k] = cubic_weight(frac - off);
            }
            let sum: f64 = w.iter().sum();
            for wk in &mut w {
                *wk /= sum;
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resize; output is clamped to the input's value range.
pub fn resize_bicubic(img: &RasterF32, w: usize, h: usize) -> Result<RasterF32> {
    if w < 4 || h < 4 {
        return Err(Error::param(format!("resize target {w}x{h} below 4x4")));
    }
    if img.dims() == (w, h) {
        return Ok(img.clone());
    }
    let ch = img.channels;
    let (lo, hi) = img.min_max();
    let xt = cubic_taps(img.width, w);
    let yt = cubic_taps(img.height, h);

    // horizontal pass: src rows x dst cols
    let mut tmp = vec![0f64; img.height * w * ch];
    for y in 0..img.height {
        for (x, (idx, wt)) in xt.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * img.get_c(idx[k], y, c) as f64;
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = Vec::with_capacity(w * h * ch);
    for (idx, wt) in &yt {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * tmp[(idx[k] * w + x) * ch + c];
                }
                out.push((acc as f32).clamp(lo, hi));
            }
        }
    }
    Ok(RasterF32::from_vec_unchecked(w, h, ch, out))
}
