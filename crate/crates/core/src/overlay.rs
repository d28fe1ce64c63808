//! Numbered rotated-box overlays plus a JSON sidecar listing what was drawn.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::heat;
use crate::localize::{Point, RotatedBox};
use crate::raster::RasterF32;

const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;
const SCALE: usize = 2;
const BOX_COLOR: [u8; 3] = [255, 230, 0];
const TEXT_COLOR: [u8; 3] = [255, 255, 255];
const TEXT_BG: [u8; 3] = [0, 0, 0];
const HEAT_ALPHA: f32 = 0.35;

#[rustfmt::skip]
const DIGITS: [[u8; GLYPH_H]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRegion {
    pub id: u32,
    pub corners: [[f64; 2]; 4],
    /// Top-left pixel of the drawn number.
    pub label_at: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlaySidecar {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<OverlayRegion>,
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<[u8; 3]>,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = c;
        }
    }

    fn line(&mut self, a: Point, b: Point, c: [u8; 3]) {
        let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()) * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let x = a.0 + (b.0 - a.0) * t;
            let y = a.1 + (b.1 - a.1) * t;
            self.put(x.round() as i64, y.round() as i64, c);
        }
    }

    fn text(&mut self, x0: usize, y0: usize, s: &str) {
        let (tw, th) = text_size(s);
        for y in y0.saturating_sub(1)..y0 + th + 1 {
            for x in x0.saturating_sub(1)..x0 + tw + 1 {
                self.put(x as i64, y as i64, TEXT_BG);
            }
        }
        for (k, ch) in s.bytes().enumerate() {
            let glyph = DIGITS[(ch - b'0') as usize];
            let gx = x0 + k * (GLYPH_W + 1) * SCALE;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits >> (GLYPH_W - 1 - col) & 1 == 1 {
                        for dy in 0..SCALE {
                            for dx in 0..SCALE {
                                let x = gx + col * SCALE + dx;
                                let y = y0 + row * SCALE + dy;
                                self.put(x as i64, y as i64, TEXT_COLOR);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn text_size(s: &str) -> (usize, usize) {
    let n = s.len();
    ((n * (GLYPH_W + 1) - 1) * SCALE, GLYPH_H * SCALE)
}

fn label_anchor(b: &RotatedBox, label: &str, w: usize, h: usize) -> [usize; 2] {
    let (tw, th) = text_size(label);
    let aabb = b.aabb();
    let x = aabb.x0.round().max(1.0) as usize;
    let y = if aabb.y0 - th as f64 - 2.0 >= 1.0 {
        (aabb.y0 - th as f64 - 2.0).round() as usize
    } else {
        (aabb.y1 + 2.0).round().max(1.0) as usize
    };
    [
        x.min(w.saturating_sub(tw + 1)),
        y.min(h.saturating_sub(th + 1)),
    ]
}

/// Draws the frame tinted by `fused`, each box outline, and its id.
/// Returns RGB8 pixels (row-major) and the sidecar.
pub fn render_overlay(
    base: &RasterF32,
    fused: Option<&RasterF32>,
    boxes: &[(u32, RotatedBox)],
) -> Result<(RasterF32, OverlaySidecar)> {
    let (w, h) = base.dims();
    if let Some(f) = fused {
        f.require_same_dims(base)?;
        f.require_channels(1)?;
    }
    let mut canvas = Canvas {
        w,
        h,
        px: Vec::with_capacity(w * h),
    };
    for i in 0..w * h {
        let rgb = match base.channels() {
            1 => [base.data()[i]; 3],
            _ => [base.data()[3 * i], base.data()[3 * i + 1], base.data()[3 * i + 2]],
        };
        let mut c = rgb.map(|v| v.clamp(0.0, 1.0));
        if let Some(f) = fused {
            let hot = heat(f.data()[i]);
            for k in 0..3 {
                c[k] = (1.0 - HEAT_ALPHA) * c[k] + HEAT_ALPHA * hot[k] as f32 / 255.0;
            }
        }
        canvas.px.push(c.map(|v| (v as f64 * 255.0).round() as u8));
    }
    let mut regions = Vec::with_capacity(boxes.len());
    for (id, b) in boxes {
        let corners = b.corners();
        for k in 0..4 {
            canvas.line(corners[k], corners[(k + 1) % 4], BOX_COLOR);
        }
        regions.push(OverlayRegion {
            id: *id,
            corners: corners.map(|(x, y)| [x, y]),
            label_at: [0, 0],
        });
    }
    for (r, (id, b)) in regions.iter_mut().zip(boxes) {
        let label = id.to_string();
        r.label_at = label_anchor(b, &label, w, h);
        canvas.text(r.label_at[0], r.label_at[1], &label);
    }
    let data = canvas
        .px
        .iter()
        .flat_map(|c| c.map(|v| (v as f64 / 255.0) as f32))
        .collect();
    Ok((
        RasterF32::new(w, h, 3, data)?,
        OverlaySidecar {
            width: w,
            height: h,
            regions,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_box_outline_and_label() {
        let base = RasterF32::filled(64, 48, 0.0);
        let b = RotatedBox::new(32.0, 30.0, 20.0, 10.0, 0.0);
        let (img, side) = render_overlay(&base, None, &[(7, b)]).unwrap();
        assert_eq!(side.regions.len(), 1);
        assert_eq!(side.regions[0].id, 7);
        // Left edge of the box at x = 22.
        let px = |x: usize, y: usize| [img.get_c(x, y, 0), img.get_c(x, y, 1), img.get_c(x, y, 2)];
        assert!(px(22, 30)[0] > 0.9 && px(22, 30)[2] < 0.1);
        let [lx, ly] = side.regions[0].label_at;
        let lit = (0..10)
            .flat_map(|dy| (0..6).map(move |dx| (lx + dx, ly + dy)))
            .filter(|&(x, y)| px(x, y) == [1.0, 1.0, 1.0])
            .count();
        assert!(lit > 10);
    }

    #[test]
    fn labels_stay_inside_frame() {
        let base = RasterF32::filled(40, 40, 0.5);
        let boxes: Vec<_> = (1..=12)
            .map(|i| (i, RotatedBox::new(2.0 + 3.0 * i as f64, 2.0, 4.0, 3.0, 30.0)))
            .collect();
        let (_, side) = render_overlay(&base, None, &boxes).unwrap();
        for r in &side.regions {
            assert!(r.label_at[0] < 40 && r.label_at[1] < 40);
        }
    }
}
