//! PNG decoding to [`RasterF32`] and PNG encoders for masks, heatmaps and overlays.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::fuse::Mask;
use crate::raster::RasterF32;

/// Decodes an 8- or 16-bit PNG. Gray inputs stay single-channel; alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<RasterF32> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let wide = matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let gray = img.color().channel_count() <= 2;
    let data: Vec<f32> = match (gray, wide) {
        (true, false) => img.to_luma8().into_raw().into_iter().map(unit8).collect(),
        (true, true) => img.to_luma16().into_raw().into_iter().map(unit16).collect(),
        (false, false) => img.to_rgb8().into_raw().into_iter().map(unit8).collect(),
        (false, true) => img.to_rgb16().into_raw().into_iter().map(unit16).collect(),
    };
    RasterF32::new(w, h, if gray { 1 } else { 3 }, data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RasterF32> {
    decode_image(&std::fs::read(path)?)
}

fn unit8(v: u8) -> f32 {
    (v as f64 / 255.0) as f32
}

fn unit16(v: u16) -> f32 {
    (v as f64 / 65535.0) as f32
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8
}

fn png_bytes<P: image::PixelWithColorType>(img: ImageBuffer<P, Vec<P::Subpixel>>) -> Result<Vec<u8>>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn dims_u32(w: usize, h: usize) -> Result<(u32, u32)> {
    match (u32::try_from(w), u32::try_from(h)) {
        (Ok(w), Ok(h)) => Ok((w, h)),
        _ => Err(Error::input("raster too large for PNG")),
    }
}

/// 8-bit PNG; 1-channel rasters become gray, 3-channel become RGB.
pub fn encode_png8(img: &RasterF32) -> Result<Vec<u8>> {
    let (w, h) = dims_u32(img.width(), img.height())?;
    let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    match img.channels() {
        1 => png_bytes(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("sized buffer")),
        _ => png_bytes(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("sized buffer")),
    }
}

/// 16-bit gray PNG of a [0,1] map.
pub fn encode_png16(map: &RasterF32) -> Result<Vec<u8>> {
    map.require_channels(1)?;
    let (w, h) = dims_u32(map.width(), map.height())?;
    let raw: Vec<u16> = map
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
        .collect();
    png_bytes(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("sized buffer"))
}

/// Heatmap rendering of a [0,1] map (black, red, yellow, white ramp).
pub fn encode_heatmap(map: &RasterF32) -> Result<Vec<u8>> {
    map.require_channels(1)?;
    let (w, h) = dims_u32(map.width(), map.height())?;
    let mut raw = Vec::with_capacity(map.data().len() * 3);
    for &v in map.data() {
        raw.extend(heat(v));
    }
    png_bytes(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("sized buffer"))
}

pub(crate) fn heat(v: f32) -> [u8; 3] {
    let t = v.clamp(0.0, 1.0) * 3.0;
    let r = t.min(1.0);
    let g = (t - 1.0).clamp(0.0, 1.0);
    let b = (t - 2.0).clamp(0.0, 1.0);
    [to_u8(r), to_u8(g), to_u8(b)]
}

pub fn encode_mask(mask: &Mask) -> Result<Vec<u8>> {
    let (w, h) = dims_u32(mask.width, mask.height)?;
    let raw = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    png_bytes(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("sized buffer"))
}

/// Any nonzero gray level is foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Mask {
        width: w,
        height: h,
        data: img.into_raw().into_iter().map(|v| v > 0).collect(),
    })
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    decode_mask(&std::fs::read(path)?)
}

pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_round_trip_is_exact() {
        let img = RasterF32::new(3, 2, 3, (0..18).map(|i| unit8((i * 14) as u8)).collect()).unwrap();
        let back = decode_image(&encode_png8(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn gray16_round_trip_is_exact() {
        let map = RasterF32::from_fn(5, 4, |x, y| unit16((x * 9000 + y * 700) as u16));
        let back = decode_image(&encode_png16(&map).unwrap()).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn mask_round_trip() {
        let m = Mask::from_fn(7, 3, |x, y| (x + y) % 3 == 0);
        assert_eq!(decode_mask(&encode_mask(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        assert!(decode_image(b"\x89PNG\r\n\x1a\nnot really").is_err());
        assert!(decode_image(b"").is_err());
    }

    #[test]
    fn heat_ramp_endpoints() {
        assert_eq!(heat(0.0), [0, 0, 0]);
        assert_eq!(heat(1.0), [255, 255, 255]);
    }
}
