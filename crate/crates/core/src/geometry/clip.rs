use super::{GeometryError, NormPoint, Path, PatchFrame, RawGeometry, RingSet};
use super::measure::signed_ring_area;

/// Vertices further than this outside the unit square count as cropped.
const OUTSIDE_EPS: f64 = 1e-9;
const SAME_POINT_EPS: f64 = 1e-12;
const MIN_RING_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Clipped {
    Area(RingSet),
    Line(Path),
}

/// Normalizes projected geometry against `frame` and clips it to the unit
/// square. The flag reports whether anything fell outside the frame.
pub fn clip_and_normalize(raw: &RawGeometry, frame: &PatchFrame) -> Result<(Clipped, bool), GeometryError> {
    match raw {
        RawGeometry::Rings(rings) => {
            if rings.iter().all(|r| r.is_empty()) {
                return Err(GeometryError::EmptyInput);
            }
            let norm: Vec<Vec<NormPoint>> =
                rings.iter().map(|r| r.iter().map(|&p| frame.normalize(p)).collect()).collect();
            let (set, cropped) = clip_rings(&norm);
            if set.rings.is_empty() {
                return Err(GeometryError::EmptyAfterClip);
            }
            Ok((Clipped::Area(set), cropped))
        }
        RawGeometry::Lines(parts) => {
            if parts.iter().all(|p| p.is_empty()) {
                return Err(GeometryError::EmptyInput);
            }
            let norm: Vec<Vec<NormPoint>> =
                parts.iter().map(|r| r.iter().map(|&p| frame.normalize(p)).collect()).collect();
            let (path, cropped) = clip_path(&norm);
            if path.parts.is_empty() {
                return Err(GeometryError::EmptyAfterClip);
            }
            Ok((Clipped::Line(path), cropped))
        }
    }
}

fn is_outside(p: NormPoint) -> bool {
    p.x < -OUTSIDE_EPS || p.x > 1.0 + OUTSIDE_EPS || p.y < -OUTSIDE_EPS || p.y > 1.0 + OUTSIDE_EPS
}

fn clamp_unit(p: NormPoint) -> NormPoint {
    NormPoint::new(p.x.clamp(0.0, 1.0), p.y.clamp(0.0, 1.0))
}

fn same(a: NormPoint, b: NormPoint) -> bool {
    (a.x - b.x).abs() <= SAME_POINT_EPS && (a.y - b.y).abs() <= SAME_POINT_EPS
}

#[derive(Clone, Copy)]
enum Boundary {
    Left,
    Right,
    Bottom,
    Top,
}

impl Boundary {
    const ALL: [Boundary; 4] = [Boundary::Left, Boundary::Right, Boundary::Bottom, Boundary::Top];

    fn inside(self, p: NormPoint) -> bool {
        match self {
            Boundary::Left => p.x >= 0.0,
            Boundary::Right => p.x <= 1.0,
            Boundary::Bottom => p.y >= 0.0,
            Boundary::Top => p.y <= 1.0,
        }
    }

    fn intersect(self, a: NormPoint, b: NormPoint) -> NormPoint {
        match self {
            Boundary::Left | Boundary::Right => {
                let x = if matches!(self, Boundary::Left) { 0.0 } else { 1.0 };
                let t = (x - a.x) / (b.x - a.x);
                NormPoint::new(x, a.y + t * (b.y - a.y))
            }
            Boundary::Bottom | Boundary::Top => {
                let y = if matches!(self, Boundary::Bottom) { 0.0 } else { 1.0 };
                let t = (y - a.y) / (b.y - a.y);
                NormPoint::new(a.x + t * (b.x - a.x), y)
            }
        }
    }
}

/// Sutherland-Hodgman against one boundary of the unit square. `poly` is
/// open (no repeated closing vertex).
fn clip_against(poly: &[NormPoint], boundary: Boundary) -> Vec<NormPoint> {
    let mut out = Vec::with_capacity(poly.len() + 4);
    let Some(&last) = poly.last() else {
        return out;
    };
    let mut prev = last;
    for &cur in poly {
        let cur_in = boundary.inside(cur);
        let prev_in = boundary.inside(prev);
        if cur_in {
            if !prev_in {
                out.push(boundary.intersect(prev, cur));
            }
            out.push(cur);
        } else if prev_in {
            out.push(boundary.intersect(prev, cur));
        }
        prev = cur;
    }
    out
}

fn open_ring(ring: &[NormPoint]) -> &[NormPoint] {
    match (ring.first(), ring.last()) {
        (Some(&a), Some(&b)) if ring.len() > 1 && same(a, b) => &ring[..ring.len() - 1],
        _ => ring,
    }
}

/// Clips rings to the unit square. Input rings may be open or closed; output
/// rings are closed. Rings that vanish are dropped.
pub fn clip_rings(rings: &[Vec<NormPoint>]) -> (RingSet, bool) {
    let cropped = rings.iter().flatten().any(|&p| is_outside(p));
    let mut out = Vec::new();
    for ring in rings {
        let mut poly = open_ring(ring).to_vec();
        for b in Boundary::ALL {
            poly = clip_against(&poly, b);
            if poly.is_empty() {
                break;
            }
        }
        let mut cleaned: Vec<NormPoint> = Vec::with_capacity(poly.len() + 1);
        for p in poly.into_iter().map(clamp_unit) {
            if cleaned.last().map_or(true, |&q| !same(p, q)) {
                cleaned.push(p);
            }
        }
        while cleaned.len() > 1 && same(cleaned[0], *cleaned.last().unwrap()) {
            cleaned.pop();
        }
        if cleaned.len() < 3 {
            continue;
        }
        cleaned.push(cleaned[0]);
        if signed_ring_area(&cleaned).abs() <= MIN_RING_AREA {
            continue;
        }
        out.push(cleaned);
    }
    (RingSet::new(out), cropped)
}

/// Liang-Barsky parametric range of segment `a -> b` inside the unit square.
fn clip_segment(a: NormPoint, b: NormPoint) -> Option<(f64, f64)> {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [(-dx, a.x), (dx, 1.0 - a.x), (-dy, a.y), (dy, 1.0 - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

fn lerp(a: NormPoint, b: NormPoint, t: f64) -> NormPoint {
    if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        NormPoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
    }
}

/// Clips polyline parts to the unit square, splitting a part wherever it
/// leaves and re-enters the square.
pub fn clip_path(parts: &[Vec<NormPoint>]) -> (Path, bool) {
    let cropped = parts.iter().flatten().any(|&p| is_outside(p));
    let mut out: Vec<Vec<NormPoint>> = Vec::new();
    let mut flush = |cur: &mut Vec<NormPoint>| {
        let mut cleaned: Vec<NormPoint> = Vec::with_capacity(cur.len());
        for p in cur.drain(..).map(clamp_unit) {
            if cleaned.last().map_or(true, |&q| !same(p, q)) {
                cleaned.push(p);
            }
        }
        if cleaned.len() >= 2 {
            out.push(cleaned);
        }
    };
    for part in parts {
        let mut cur: Vec<NormPoint> = Vec::new();
        if part.len() == 1 && !is_outside(part[0]) {
            continue;
        }
        for w in part.windows(2) {
            let (a, b) = (w[0], w[1]);
            match clip_segment(a, b) {
                Some((t0, t1)) => {
                    let pa = lerp(a, b, t0);
                    let pb = lerp(a, b, t1);
                    if t0 > 0.0 && !cur.is_empty() {
                        flush(&mut cur);
                    }
                    if cur.is_empty() {
                        cur.push(pa);
                    }
                    cur.push(pb);
                    if t1 < 1.0 {
                        flush(&mut cur);
                    }
                }
                None => flush(&mut cur),
            }
        }
        flush(&mut cur);
    }
    (Path::new(out), cropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::area_fraction;

    fn pts(v: &[(f64, f64)]) -> Vec<NormPoint> {
        v.iter().map(|&p| p.into()).collect()
    }

    #[test]
    fn inside_polygon_is_untouched() {
        let ring = pts(&[(0.1, 0.1), (0.5, 0.1), (0.5, 0.4), (0.1, 0.4), (0.1, 0.1)]);
        let (set, cropped) = clip_rings(&[ring.clone()]);
        assert!(!cropped);
        assert_eq!(set.rings, vec![ring]);
    }

    #[test]
    fn covering_polygon_becomes_unit_square() {
        let ring = pts(&[(-0.5, -0.5), (1.5, -0.5), (1.5, 1.5), (-0.5, 1.5), (-0.5, -0.5)]);
        let (set, cropped) = clip_rings(&[ring]);
        assert!(cropped);
        assert_eq!(set.rings.len(), 1);
        assert!((area_fraction(&set) - 1.0).abs() < 1e-12);
        assert_eq!(set.rings[0].len(), 5);
    }

    #[test]
    fn disjoint_polygon_vanishes() {
        let ring = pts(&[(2.0, 2.0), (3.0, 2.0), (3.0, 3.0), (2.0, 2.0)]);
        let (set, cropped) = clip_rings(&[ring]);
        assert!(cropped);
        assert!(set.rings.is_empty());
    }

    #[test]
    fn path_exiting_and_reentering_splits() {
        let p = pts(&[(0.2, 0.5), (0.5, 1.5), (0.8, 0.5)]);
        let (path, cropped) = clip_path(&[p]);
        assert!(cropped);
        assert_eq!(path.parts.len(), 2);
        for part in &path.parts {
            for q in part {
                assert!(q.y <= 1.0);
            }
        }
    }

    #[test]
    fn path_crossing_whole_square() {
        let p = pts(&[(-1.0, 0.5), (2.0, 0.5)]);
        let (path, _) = clip_path(&[p]);
        assert_eq!(path.parts, vec![pts(&[(0.0, 0.5), (1.0, 0.5)])]);
    }

    #[test]
    fn empty_after_clip_error() {
        let f = crate::geometry::PatchFrame::centered(0.0, 0.0, 10, 10, 1.0, chrono::Utc::now()).unwrap();
        let raw = RawGeometry::Lines(vec![vec![[100.0, 100.0], [200.0, 100.0]]]);
        assert_eq!(clip_and_normalize(&raw, &f).unwrap_err(), GeometryError::EmptyAfterClip);
    }
}
