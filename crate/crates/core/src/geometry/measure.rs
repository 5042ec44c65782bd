use std::fmt;

use serde::{Deserialize, Serialize};

use super::{NormPoint, RingSet};

/// Shoelace area of a closed ring; positive for counter-clockwise rings.
pub fn signed_ring_area(ring: &[NormPoint]) -> f64 {
    ring.windows(2).map(|w| w[0].x * w[1].y - w[1].x * w[0].y).sum::<f64>() / 2.0
}

/// Net area of a ring set as a fraction of the unit square.
pub fn area_fraction(g: &RingSet) -> f64 {
    let a: f64 = g.rings.iter().map(|r| signed_ring_area(r)).sum();
    a.clamp(0.0, 1.0)
}

pub fn perimeter(g: &RingSet) -> f64 {
    g.rings.iter().flat_map(|r| r.windows(2).map(|w| w[0].dist(w[1]))).sum()
}

/// Area-weighted centroid over all rings (holes weigh negatively). Falls back
/// to the vertex mean when the net area vanishes.
pub fn centroid(g: &RingSet) -> NormPoint {
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for r in &g.rings {
        for w in r.windows(2) {
            let cross = w[0].x * w[1].y - w[1].x * w[0].y;
            a += cross;
            cx += (w[0].x + w[1].x) * cross;
            cy += (w[0].y + w[1].y) * cross;
        }
    }
    if a.abs() > 1e-15 {
        return NormPoint::new(cx / (3.0 * a), cy / (3.0 * a));
    }
    let pts: Vec<&NormPoint> = g.rings.iter().flatten().collect();
    let n = pts.len().max(1) as f64;
    NormPoint::new(pts.iter().map(|p| p.x).sum::<f64>() / n, pts.iter().map(|p| p.y).sum::<f64>() / n)
}

/// Cell of the 3x3 grid over the patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridLabel {
    LeftTop,
    CenterTop,
    RightTop,
    LeftCenter,
    Center,
    RightCenter,
    LeftBottom,
    CenterBottom,
    RightBottom,
}

impl GridLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GridLabel::LeftTop => "left-top",
            GridLabel::CenterTop => "center-top",
            GridLabel::RightTop => "right-top",
            GridLabel::LeftCenter => "left-center",
            GridLabel::Center => "center",
            GridLabel::RightCenter => "right-center",
            GridLabel::LeftBottom => "left-bottom",
            GridLabel::CenterBottom => "center-bottom",
            GridLabel::RightBottom => "right-bottom",
        }
    }
}

impl fmt::Display for GridLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn third(v: f64) -> usize {
    // floor(3v) clamped, so 1/3 and 2/3 fall into the higher cell
    ((3.0 * v).floor().max(0.0) as usize).min(2)
}

/// Grid cell containing `p`. Cell boundaries are low-inclusive.
pub fn grid_label(p: NormPoint) -> GridLabel {
    use GridLabel::*;
    const TABLE: [[GridLabel; 3]; 3] = [
        [LeftBottom, CenterBottom, RightBottom],
        [LeftCenter, Center, RightCenter],
        [LeftTop, CenterTop, RightTop],
    ];
    TABLE[third(p.y)][third(p.x)]
}

pub fn coarse_location(g: &RingSet) -> GridLabel {
    grid_label(centroid(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Square,
    Rectangular,
    Circular,
    Irregular,
}

impl ShapeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeClass::Square => "square",
            ShapeClass::Rectangular => "rectangular",
            ShapeClass::Circular => "circular",
            ShapeClass::Irregular => "irregular",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeThresholds {
    /// Minimum isoperimetric quotient for "circular".
    pub circular_q: f64,
    /// Minimum bounding-box fill for "square"/"rectangular".
    pub box_fill: f64,
    pub square_aspect_min: f64,
    pub square_aspect_max: f64,
}

impl Default for ShapeThresholds {
    fn default() -> Self {
        Self { circular_q: 0.85, box_fill: 0.85, square_aspect_min: 0.8, square_aspect_max: 1.25 }
    }
}

/// Classifies by isoperimetric quotient `4*pi*A/P^2` and the fraction of the
/// axis-aligned bounding box covered by the shape.
pub fn classify_shape(g: &RingSet, t: &ShapeThresholds) -> ShapeClass {
    let area: f64 = g.rings.iter().map(|r| signed_ring_area(r)).sum();
    let per = perimeter(g);
    if area <= 0.0 || per <= 0.0 {
        return ShapeClass::Irregular;
    }
    let q = 4.0 * std::f64::consts::PI * area / (per * per);
    if q >= t.circular_q {
        return ShapeClass::Circular;
    }
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in g.rings.iter().flatten() {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let (w, h) = (max_x - min_x, max_y - min_y);
    if w <= 0.0 || h <= 0.0 {
        return ShapeClass::Irregular;
    }
    let fill = area / (w * h);
    let aspect = w / h;
    if fill >= t.box_fill {
        if (t.square_aspect_min..=t.square_aspect_max).contains(&aspect) {
            ShapeClass::Square
        } else {
            ShapeClass::Rectangular
        }
    } else {
        ShapeClass::Irregular
    }
}
