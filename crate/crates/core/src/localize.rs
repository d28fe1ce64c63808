//! Rotated-box hypotheses from labeled regions or edge fragments, IoU-based
//! non-maximum suppression and center-distance merging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::sobel;
use crate::fuse::{hysteresis_threshold, label_regions, LabeledRegions, Mask};
use crate::raster::RasterF32;

pub type Point = (f64, f64);

const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub angle_deg: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let r = (a + 90.0).rem_euclid(180.0) - 90.0;
    // rem_euclid can land exactly on the open end after rounding
    if r >= 90.0 {
        r - 180.0
    } else {
        r
    }
}

impl RotatedBox {
    /// Builds a box in canonical form: `w >= h`, angle of the long side in [-90, 90).
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, angle_deg: f64) -> Self {
        let (w, h, a) = if w >= h { (w, h, angle_deg) } else { (h, w, angle_deg + 90.0) };
        Self {
            cx,
            cy,
            w,
            h,
            angle_deg: wrap_angle(a),
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point {
        (self.cx, self.cy)
    }

    /// Corners in counter-clockwise order (for a y-up frame).
    pub fn corners(&self) -> [Point; 4] {
        let t = self.angle_deg.to_radians();
        let (c, s) = (t.cos(), t.sin());
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
            .map(|(u, v)| (self.cx + u * c - v * s, self.cy + u * s + v * c))
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(&self.corners())
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        let t = self.angle_deg.to_radians();
        let (dx, dy) = (p.0 - self.cx, p.1 - self.cy);
        let u = dx * t.cos() + dy * t.sin();
        let v = -dx * t.sin() + dy * t.cos();
        u.abs() <= self.w / 2.0 + tol && v.abs() <= self.h / 2.0 + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Aabb {
    pub fn from_points(pts: &[Point]) -> Self {
        let mut b = Aabb {
            x0: f64::INFINITY,
            y0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for &(x, y) in pts {
            b.x0 = b.x0.min(x);
            b.y0 = b.y0.min(y);
            b.x1 = b.x1.max(x);
            b.y1 = b.y1.max(y);
        }
        b
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionHypothesis {
    pub id: u32,
    #[serde(rename = "box")]
    pub bbox: RotatedBox,
    pub aabb: Aabb,
    pub score: f64,
    /// Label in the region map this hypothesis came from.
    pub label: u32,
}

impl RegionHypothesis {
    pub fn new(id: u32, bbox: RotatedBox, score: f64, label: u32) -> Self {
        Self {
            id,
            aabb: bbox.aabb(),
            bbox,
            score,
            label,
        }
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area enclosing rectangle by rotating calipers over the convex hull.
/// Degenerate extents (single point, collinear sets) are floored at 1 pixel.
pub fn min_area_rect(points: &[Point]) -> Result<RotatedBox> {
    if points.is_empty() {
        return Err(Error::input("min_area_rect needs at least one point"));
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::input("non-finite point"));
    }
    let hull = convex_hull(points);
    let n = hull.len();
    if n == 1 {
        return Ok(RotatedBox::new(hull[0].0, hull[0].1, 1.0, 1.0, 0.0));
    }
    if n == 2 {
        let (a, b) = (hull[0], hull[1]);
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let ang = (b.1 - a.1).atan2(b.0 - a.0).to_degrees();
        return Ok(RotatedBox::new((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0, len.max(1.0), 1.0, ang));
    }

    let dot = |p: Point, d: Point| p.0 * d.0 + p.1 * d.1;
    let next = |k: usize| (k + 1) % n;
    // best: (area, u-range, v-range, edge direction)
    let mut best: Option<(f64, (f64, f64), (f64, f64), Point)> = None;
    let (mut right, mut top, mut left) = (1usize, 1usize, 1usize);
    for i in 0..n {
        let (p, q) = (hull[i], hull[next(i)]);
        let len = (q.0 - p.0).hypot(q.1 - p.1);
        let e = ((q.0 - p.0) / len, (q.1 - p.1) / len);
        let nrm = (-e.1, e.0);
        // projections are unimodal around a convex hull, so the calipers only advance
        while dot(hull[next(right)], e) > dot(hull[right], e) + GEOM_EPS {
            right = next(right);
        }
        if i == 0 {
            top = right;
        }
        while dot(hull[next(top)], nrm) > dot(hull[top], nrm) + GEOM_EPS {
            top = next(top);
        }
        if i == 0 {
            left = top;
        }
        while dot(hull[next(left)], e) < dot(hull[left], e) - GEOM_EPS {
            left = next(left);
        }
        let (umin, umax) = (dot(hull[left], e), dot(hull[right], e));
        let (vmin, vmax) = (dot(p, nrm), dot(hull[top], nrm));
        let area = (umax - umin) * (vmax - vmin);
        if best.map_or(true, |b| area < b.0 - GEOM_EPS) {
            best = Some((area, (umin, umax), (vmin, vmax), e));
        }
    }
    let (_, (umin, umax), (vmin, vmax), e) = best.unwrap();
    let nrm = (-e.1, e.0);
    let (uc, vc) = ((umin + umax) / 2.0, (vmin + vmax) / 2.0);
    let cx = uc * e.0 + vc * nrm.0;
    let cy = uc * e.1 + vc * nrm.1;
    let ang = e.1.atan2(e.0).to_degrees();
    Ok(RotatedBox::new(
        cx,
        cy,
        (umax - umin).max(1.0),
        (vmax - vmin).max(1.0),
        ang,
    ))
}

fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

/// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise `clip`.
fn clip_polygon(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let inside = |p: Point| cross(a, b, p) >= -GEOM_EPS;
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (cur, prev) = (input[j], input[(j + input.len() - 1) % input.len()]);
            let intersect = || {
                let (d1, d2) = (cross(a, b, prev), cross(a, b, cur));
                let t = d1 / (d1 - d2);
                (prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1))
            };
            match (inside(cur), inside(prev)) {
                (true, true) => out.push(cur),
                (true, false) => {
                    out.push(intersect());
                    out.push(cur);
                }
                (false, true) => out.push(intersect()),
                (false, false) => {}
            }
        }
    }
    out
}

pub fn iou(b1: &RotatedBox, b2: &RotatedBox) -> f64 {
    let (a1, a2) = (b1.area(), b2.area());
    if a1 <= 0.0 || a2 <= 0.0 {
        return 0.0;
    }
    let inter = polygon_area(&clip_polygon(&b1.corners(), &b2.corners()));
    let union = a1 + a2 - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn priority_order(a: &RegionHypothesis, b: &RegionHypothesis) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.bbox.area().total_cmp(&a.bbox.area()))
        .then(a.id.cmp(&b.id))
}

/// Greedy NMS by descending score; ties go to the larger box, then the lower id.
pub fn nms(hyps: &[RegionHypothesis], iou_threshold: f64) -> Vec<RegionHypothesis> {
    let mut sorted = hyps.to_vec();
    sorted.sort_by(priority_order);
    let mut kept: Vec<RegionHypothesis> = Vec::new();
    for h in sorted {
        if kept.iter().all(|k| iou(&k.bbox, &h.bbox) <= iou_threshold) {
            kept.push(h);
        }
    }
    kept
}

/// Single-linkage clustering on center distance; clusters with more than one
/// member become the minimum-area rectangle of all member corners.
pub fn merge_by_distance(hyps: &[RegionHypothesis], d_max: f64) -> Vec<RegionHypothesis> {
    merge_with_members(hyps, d_max).into_iter().map(|(h, _)| h).collect()
}

/// As [`merge_by_distance`], also returning the input indices behind each output.
pub fn merge_with_members(hyps: &[RegionHypothesis], d_max: f64) -> Vec<(RegionHypothesis, Vec<usize>)> {
    let n = hyps.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (hyps[i].bbox.center(), hyps[j].bbox.center());
            if (a.0 - b.0).hypot(a.1 - b.1) <= d_max {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[root_slot[r]].push(i);
    }
    let mut out: Vec<(RegionHypothesis, Vec<usize>)> = clusters
        .into_iter()
        .map(|members| {
            if members.len() == 1 {
                return (hyps[members[0]].clone(), members);
            }
            let lead = members
                .iter()
                .copied()
                .min_by(|&a, &b| priority_order(&hyps[a], &hyps[b]))
                .unwrap();
            let corners: Vec<Point> = members.iter().flat_map(|&m| hyps[m].bbox.corners()).collect();
            let bbox = min_area_rect(&corners).expect("cluster has corners");
            let id = members.iter().map(|&m| hyps[m].id).min().unwrap();
            (RegionHypothesis::new(id, bbox, hyps[lead].score, hyps[lead].label), members)
        })
        .collect();
    out.sort_by(|a, b| priority_order(&a.0, &b.0));
    out
}

/// Corners of every pixel square in a region, so boxes cover pixel extents.
pub fn region_box(regions: &LabeledRegions, label_index: usize) -> Result<RotatedBox> {
    let pts: Vec<Point> = regions
        .points(label_index)
        .into_iter()
        .flat_map(|(x, y)| [(x - 0.5, y - 0.5), (x + 0.5, y - 0.5), (x + 0.5, y + 0.5), (x - 0.5, y + 0.5)])
        .collect();
    min_area_rect(&pts)
}

/// One hypothesis per labeled region, scored by `scores[label - 1]`.
pub fn hypotheses_from_regions(regions: &LabeledRegions, scores: &[f64]) -> Result<Vec<RegionHypothesis>> {
    (0..regions.region_count())
        .map(|i| {
            let b = region_box(regions, i)?;
            Ok(RegionHypothesis::new(i as u32 + 1, b, scores[i], i as u32 + 1))
        })
        .collect()
}

/// Canny edges on a [0,1] map: Sobel gradient scaled by its maximum,
/// non-maximum suppression along the quantized gradient direction, then
/// hysteresis linking.
pub fn edges_canny(fused: &RasterF32, tau_low: f64, tau_high: f64) -> Result<Mask> {
    fused.require_channels(1)?;
    let (w, h) = fused.dims();
    let (gx, gy) = sobel(fused);
    let mag: Vec<f64> = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(a, b)| (*a as f64).hypot(*b as f64))
        .collect();
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        hysteresis_threshold(fused, tau_low, tau_high)?;
        return Ok(Mask::new(w, h));
    }
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let theta = (gy.data()[i] as f64).atan2(gx.data()[i] as f64).to_degrees().rem_euclid(180.0);
            let (dx, dy) = match theta {
                t if !(22.5..157.5).contains(&t) => (1, 0),
                t if t < 67.5 => (1, 1),
                t if t < 112.5 => (0, 1),
                _ => (-1, 1),
            };
            let (xi, yi) = (x as isize, y as isize);
            // strict on one side so plateaus of width two thin to one pixel
            if m > at(xi - dx, yi - dy) && m >= at(xi + dx, yi + dy) {
                thin[i] = (m / peak) as f32;
            }
        }
    }
    hysteresis_threshold(&RasterF32::from_vec_unchecked(w, h, 1, thin), tau_low, tau_high)
}

/// Edge fragments of the Canny mode as labeled regions.
pub fn edge_fragments(fused: &RasterF32, tau_low: f64, tau_high: f64, min_len: usize) -> Result<LabeledRegions> {
    Ok(label_regions(&edges_canny(fused, tau_low, tau_high)?, min_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn boxes() -> impl Strategy<Value = RotatedBox> {
        (0.0f64..20.0, 0.0f64..20.0, 1.0f64..12.0, 1.0f64..12.0, -90.0f64..90.0)
            .prop_map(|(x, y, w, h, a)| RotatedBox::new(x, y, w, h, a))
    }

    #[test]
    fn canonical_form() {
        let b = RotatedBox::new(0.0, 0.0, 2.0, 5.0, 10.0);
        assert_eq!((b.w, b.h), (5.0, 2.0));
        assert_eq!(b.angle_deg, 100.0 - 180.0);
        assert_eq!(RotatedBox::new(0.0, 0.0, 3.0, 1.0, 90.0).angle_deg, -90.0);
    }

    #[test]
    fn min_rect_examples() {
        let r = min_area_rect(&[(0.0, 0.0), (4.0, 0.0), (4.0, 2.0), (0.0, 2.0)]).unwrap();
        assert!((r.w - 4.0).abs() < 1e-9 && (r.h - 2.0).abs() < 1e-9);
        assert!(r.angle_deg.abs() < 1e-9 || (r.angle_deg + 180.0).abs() < 1e-9);
        assert_eq!((r.cx, r.cy), (2.0, 1.0));
        let p = min_area_rect(&[(3.0, 7.0)]).unwrap();
        assert_eq!((p.cx, p.cy, p.w, p.h), (3.0, 7.0, 1.0, 1.0));
        assert!(min_area_rect(&[]).is_err());
        // a diamond is its own minimum rectangle
        let d = min_area_rect(&[(0.0, 1.0), (1.0, 0.0), (2.0, 1.0), (1.0, 2.0)]).unwrap();
        assert!((d.area() - 2.0).abs() < 1e-9);
        assert!((d.angle_deg.abs() - 45.0).abs() < 1e-9);
    }

    fn bounding_area(pts: &[Point], t: f64) -> f64 {
        let (c, s) = (t.cos(), t.sin());
        let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in pts {
            let (u, v) = (x * c + y * s, -x * s + y * c);
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        (u1 - u0) * (v1 - v0)
    }

    proptest! {
        #[test]
        fn min_rect_matches_brute_force(pts in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 20)) {
            let r = min_area_rect(&pts).unwrap();
            let mut brute = f64::MAX;
            for a in &pts {
                for b in &pts {
                    if a != b {
                        brute = brute.min(bounding_area(&pts, (b.1 - a.1).atan2(b.0 - a.0)));
                    }
                }
            }
            prop_assert!((r.area() - brute.max(1.0)).abs() < 1e-6 * brute.max(1.0), "{} vs {}", r.area(), brute);
            for &p in &pts {
                prop_assert!(r.contains(p, 1e-6));
            }
            let aabb = Aabb::from_points(&pts);
            prop_assert!(r.area() <= aabb.area().max(1.0) + 1e-9);
            prop_assert!(r.w >= r.h && (-90.0..90.0).contains(&r.angle_deg));
            let bb = r.aabb();
            for c in r.corners() {
                prop_assert!(c.0 >= bb.x0 && c.0 <= bb.x1 && c.1 >= bb.y0 && c.1 <= bb.y1);
            }
        }
    }

    fn raster_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
        let ba = a.aabb();
        let bb = b.aabb();
        let (x0, y0) = (ba.x0.min(bb.x0), ba.y0.min(bb.y0));
        let (x1, y1) = (ba.x1.max(bb.x1), ba.y1.max(bb.y1));
        let step = 0.05;
        let (mut inter, mut uni) = (0u64, 0u64);
        let mut y = y0 + step / 2.0;
        while y < y1 {
            let mut x = x0 + step / 2.0;
            while x < x1 {
                let (ia, ib) = (a.contains((x, y), 0.0), b.contains((x, y), 0.0));
                inter += (ia && ib) as u64;
                uni += (ia || ib) as u64;
                x += step;
            }
            y += step;
        }
        if uni == 0 { 0.0 } else { inter as f64 / uni as f64 }
    }

    #[test]
    fn iou_trivial() {
        let b = RotatedBox::new(5.0, 5.0, 4.0, 2.0, 30.0);
        assert!((iou(&b, &b) - 1.0).abs() < 1e-9);
        let far = RotatedBox::new(50.0, 5.0, 4.0, 2.0, 30.0);
        assert_eq!(iou(&b, &far), 0.0);
        // half-overlapping axis boxes: 1/3
        let a = RotatedBox::new(0.0, 0.0, 2.0, 2.0, 0.0);
        let c = RotatedBox::new(1.0, 0.0, 2.0, 2.0, 0.0);
        assert!((iou(&a, &c) - 1.0 / 3.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn iou_matches_raster_oracle(a in boxes(), b in boxes()) {
            let got = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&got));
            prop_assert!((got - iou(&b, &a)).abs() < 1e-9);
            prop_assert!((got - raster_iou(&a, &b)).abs() < 0.02, "{} vs {}", got, raster_iou(&a, &b));
        }
    }

    fn hyp(id: u32, b: RotatedBox, score: f64) -> RegionHypothesis {
        RegionHypothesis::new(id, b, score, id)
    }

    #[test]
    fn nms_examples() {
        let b = RotatedBox::new(5.0, 5.0, 4.0, 2.0, 0.0);
        let one = vec![hyp(1, b, 0.5)];
        assert_eq!(nms(&one, 0.3), one);
        let two = vec![hyp(1, b, 0.4), hyp(2, b, 0.9)];
        let out = nms(&two, 0.3);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 2);
        // tie on score: larger area wins, then lower id
        let big = RotatedBox::new(5.0, 5.0, 4.4, 2.0, 0.0);
        assert_eq!(nms(&[hyp(1, b, 0.5), hyp(2, big, 0.5)], 0.3)[0].id, 2);
        assert_eq!(nms(&[hyp(3, b, 0.5), hyp(2, b, 0.5)], 0.3)[0].id, 2);
    }

    proptest! {
        #[test]
        fn nms_idempotent_subset(
            bs in prop::collection::vec((boxes(), 0.0f64..1.0), 1..12),
            thr in 0.0f64..1.0,
        ) {
            let hyps: Vec<_> = bs.into_iter().enumerate().map(|(i, (b, s))| hyp(i as u32, b, s)).collect();
            let once = nms(&hyps, thr);
            prop_assert_eq!(&nms(&once, thr), &once);
            for h in &once {
                prop_assert!(hyps.contains(h));
            }
        }
    }

    #[test]
    fn merge_examples() {
        let a = hyp(1, RotatedBox::new(0.0, 0.0, 2.0, 2.0, 0.0), 0.3);
        let far = hyp(2, RotatedBox::new(100.0, 0.0, 2.0, 2.0, 0.0), 0.6);
        let out = merge_by_distance(&[a.clone(), far.clone()], 10.0);
        assert_eq!(out, vec![far.clone(), a.clone()]);

        let near = hyp(3, RotatedBox::new(1.0, 0.0, 2.0, 2.0, 0.0), 0.8);
        let out = merge_by_distance(&[a.clone(), near.clone()], 2.0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.8);
        assert_eq!(out[0].id, 1);
        for c in a.bbox.corners().iter().chain(&near.bbox.corners()) {
            assert!(out[0].bbox.contains(*c, 1e-6));
        }

        // chain: 0-1 and 1-2 are near, 0-2 is not
        let chain: Vec<_> = (0..3)
            .map(|i| hyp(i, RotatedBox::new(4.0 * i as f64, 0.0, 2.0, 2.0, 0.0), 0.5))
            .collect();
        assert_eq!(merge_by_distance(&chain, 5.0).len(), 1);
        assert_eq!(merge_by_distance(&chain, 3.0).len(), 3);
    }

    proptest! {
        #[test]
        fn merge_preserves_coverage(bs in prop::collection::vec(boxes(), 1..8), d in 0.0f64..15.0) {
            let hyps: Vec<_> = bs.into_iter().enumerate().map(|(i, b)| hyp(i as u32, b, 0.5)).collect();
            let out = merge_by_distance(&hyps, d);
            for h in &hyps {
                for c in h.bbox.corners() {
                    prop_assert!(out.iter().any(|o| o.bbox.contains(c, 1e-6)));
                }
            }
        }
    }

    #[test]
    fn canny_examples() {
        assert_eq!(edges_canny(&RasterF32::filled(10, 10, 0.5), 0.3, 0.6).unwrap().count(), 0);

        let step = RasterF32::from_fn(12, 8, |x, _| if x < 6 { 0.0 } else { 1.0 });
        let e = edges_canny(&step, 0.3, 0.6).unwrap();
        for y in 0..8 {
            let row: Vec<usize> = (0..12).filter(|&x| e.get(x, y)).collect();
            assert_eq!(row.len(), 1, "row {y}: {row:?}");
        }

        let r = 10.0;
        let disk = RasterF32::from_fn(32, 32, |x, y| {
            if (x as f64 - 16.0).hypot(y as f64 - 16.0) <= r { 1.0 } else { 0.0 }
        });
        let e = edges_canny(&disk, 0.2, 0.5).unwrap();
        assert!(e.count() > 40);
        for y in 0..32 {
            for x in 0..32 {
                if e.get(x, y) {
                    let d = (x as f64 - 16.0).hypot(y as f64 - 16.0);
                    assert!((d - r).abs() <= 1.0, "edge at ({x},{y}) d={d}");
                }
            }
        }
    }

    #[test]
    fn region_boxes_cover_pixels() {
        let m = Mask::from_fn(10, 10, |x, y| (2..6).contains(&x) && (3..5).contains(&y));
        let l = label_regions(&m, 1);
        let h = hypotheses_from_regions(&l, &[0.7]).unwrap();
        assert_eq!(h.len(), 1);
        assert!((h[0].bbox.w - 4.0).abs() < 1e-9 && (h[0].bbox.h - 2.0).abs() < 1e-9);
        assert!((h[0].bbox.cx - 3.5).abs() < 1e-9 && (h[0].bbox.cy - 3.5).abs() < 1e-9);
    }
}
