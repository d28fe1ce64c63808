//! Small convolution helpers. All filters use replicate borders.

use crate::raster::RasterF32;

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Convolves a single-channel raster with the same odd 1-D kernel along x then y.
pub fn convolve_separable(img: &RasterF32, kernel: &[f64]) -> RasterF32 {
    debug_assert_eq!(img.channels(), 1);
    debug_assert!(kernel.len() % 2 == 1);
    let (w, h) = img.dims();
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * img.get_clamped(x as isize + k as isize - r, y as isize) as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out.push(acc as f32);
        }
    }
    RasterF32::from_vec_unchecked(w, h, 1, out)
}

pub fn gaussian_blur(img: &RasterF32, sigma: f64) -> RasterF32 {
    if sigma <= 0.0 {
        return img.clone();
    }
    convolve_separable(img, &gaussian_kernel(sigma))
}

/// Sobel derivatives (gx, gy) of a single-channel raster.
pub fn sobel(img: &RasterF32) -> (RasterF32, RasterF32) {
    let (w, h) = img.dims();
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy);
            gx.push(
                (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1)),
            );
            gy.push(
                (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1)),
            );
        }
    }
    (
        RasterF32::from_vec_unchecked(w, h, 1, gx),
        RasterF32::from_vec_unchecked(w, h, 1, gy),
    )
}

pub fn sobel_magnitude(img: &RasterF32) -> RasterF32 {
    let (gx, gy) = sobel(img);
    let data = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(a, b)| a.hypot(*b))
        .collect();
    RasterF32::from_vec_unchecked(img.width(), img.height(), 1, data)
}

/// 5-point Laplacian stencil with replicate borders.
pub fn laplacian4(img: &RasterF32) -> RasterF32 {
    let (w, h) = img.dims();
    RasterF32::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        img.get_clamped(x - 1, y)
            + img.get_clamped(x + 1, y)
            + img.get_clamped(x, y - 1)
            + img.get_clamped(x, y + 1)
            - 4.0 * img.get_clamped(x, y)
    })
}
