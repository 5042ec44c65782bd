use std::cmp::{Ordering, Reverse};
use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{ElementKind, OsmElement, PartRole};
use crate::geo::{GeoBBox, GeoPoint, LocalProjection};
use crate::geometry::{
    area_fraction, clip_and_normalize, path_length_m, Clipped, GeometryError, NormPoint, Path, PatchFrame,
    RawGeometry, RingSet,
};

/// Keys that make a closed way an area.
pub const AREA_KEYS: &[&str] = &[
    "landuse", "natural", "building", "leisure", "amenity", "water", "landcover", "place", "aeroway", "man_made",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementClass {
    Area,
    NonArea,
    Ignored,
}

/// Untagged elements and administrative boundaries are ignored; multipolygon
/// relations and closed ways with an area tag are areas; everything else is
/// linear.
pub fn classify_element(e: &OsmElement) -> ElementClass {
    if e.tags.is_empty() || e.has_tag("boundary", "administrative") || e.has_tag("type", "boundary") {
        return ElementClass::Ignored;
    }
    if e.kind == ElementKind::Relation && e.has_tag("type", "multipolygon") {
        return ElementClass::Area;
    }
    let area_tagged = e.has_tag("area", "yes") || e.tags.iter().any(|t| AREA_KEYS.contains(&t.key.as_str()));
    if e.is_closed() && area_tagged && !e.has_tag("area", "no") {
        ElementClass::Area
    } else {
        ElementClass::NonArea
    }
}

/// Union keyed by `(kind, id)`; on conflict the copy from `first` wins.
/// The result is sorted by key.
pub fn merge_dedupe(first: Vec<OsmElement>, second: Vec<OsmElement>) -> Vec<OsmElement> {
    let mut map: BTreeMap<(ElementKind, i64), OsmElement> = BTreeMap::new();
    for e in first.into_iter().chain(second) {
        map.entry(e.key()).or_insert(e);
    }
    map.into_values().collect()
}

/// A patch's frame together with the projection that maps OSM lon/lat onto it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchContext {
    pub frame: PatchFrame,
    pub projection: LocalProjection,
}

impl PatchContext {
    pub fn from_geo(bbox: &GeoBBox, gsd_m: f64, capture_time: DateTime<Utc>) -> Result<Self, GeometryError> {
        let (frame, projection) = PatchFrame::from_geo(bbox, gsd_m, capture_time)?;
        Ok(Self { frame, projection })
    }

    pub fn geo_to_norm(&self, p: GeoPoint) -> NormPoint {
        self.frame.normalize(self.projection.forward(p))
    }

    pub fn norm_to_geo(&self, p: NormPoint) -> GeoPoint {
        self.projection.inverse(self.frame.denormalize(p))
    }

    fn project(&self, coords: &[GeoPoint]) -> Vec<[f64; 2]> {
        coords.iter().map(|&p| self.projection.forward(p)).collect()
    }

    /// Rings oriented counter-clockwise for outer parts and clockwise for holes.
    pub fn project_area(&self, e: &OsmElement) -> RawGeometry {
        let rings = e
            .parts
            .iter()
            .filter(|p| p.is_closed())
            .map(|p| {
                let mut ring = self.project(&p.coords);
                let a: f64 = ring.windows(2).map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1]).sum();
                let want_positive = p.role != PartRole::Inner;
                if (a > 0.0) != want_positive {
                    ring.reverse();
                }
                ring
            })
            .collect();
        RawGeometry::Rings(rings)
    }

    pub fn project_lines(&self, e: &OsmElement) -> RawGeometry {
        RawGeometry::Lines(e.parts.iter().map(|p| self.project(&p.coords)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    /// Minimum clipped area, as a fraction of the patch.
    pub min_area_fraction: f64,
    /// Minimum clipped length, as a fraction of sqrt(patch area).
    pub min_length_fraction: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self { min_area_fraction: 0.1, min_length_fraction: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct AreaSelection<'a> {
    pub element: &'a OsmElement,
    pub rings: RingSet,
    pub is_cropped: bool,
    pub fraction: f64,
}

#[derive(Debug, Clone)]
pub struct LineSelection<'a> {
    pub element: &'a OsmElement,
    pub path: Path,
    pub is_cropped: bool,
    pub length_m: f64,
}

/// The area element covering the largest share of the patch, if that share
/// reaches `min_area_fraction`. Ties go to the lower `(kind, id)`.
pub fn select_area_element<'a>(
    elements: &'a [OsmElement],
    ctx: &PatchContext,
    params: &SelectionParams,
) -> Option<AreaSelection<'a>> {
    let mut best: Option<AreaSelection<'a>> = None;
    for e in elements.iter().filter(|e| classify_element(e) == ElementClass::Area) {
        let Ok((Clipped::Area(rings), is_cropped)) = clip_and_normalize(&ctx.project_area(e), &ctx.frame) else {
            continue;
        };
        let fraction = area_fraction(&rings);
        let better = match &best {
            None => true,
            Some(b) => match fraction.partial_cmp(&b.fraction) {
                Some(Ordering::Greater) => true,
                Some(Ordering::Equal) => e.key() < b.element.key(),
                _ => false,
            },
        };
        if better {
            best = Some(AreaSelection { element: e, rings, is_cropped, fraction });
        }
    }
    best.filter(|b| b.fraction >= params.min_area_fraction)
}

/// Among the three longest linear elements, the one with the most tags.
/// Ties prefer the longer element, then the lower `(kind, id)`.
pub fn select_nonarea_element<'a>(
    elements: &'a [OsmElement],
    ctx: &PatchContext,
    params: &SelectionParams,
) -> Option<LineSelection<'a>> {
    let mut lines: Vec<LineSelection<'a>> = elements
        .iter()
        .filter(|e| classify_element(e) == ElementClass::NonArea)
        .filter_map(|e| {
            let Ok((Clipped::Line(path), is_cropped)) = clip_and_normalize(&ctx.project_lines(e), &ctx.frame)
            else {
                return None;
            };
            let length_m = path_length_m(&path, &ctx.frame);
            (length_m > 0.0).then_some(LineSelection { element: e, path, is_cropped, length_m })
        })
        .collect();
    lines.sort_by(|a, b| b.length_m.total_cmp(&a.length_m).then_with(|| a.element.key().cmp(&b.element.key())));
    lines.truncate(3);
    let winner = lines.into_iter().max_by(|a, b| {
        a.element
            .tags
            .len()
            .cmp(&b.element.tags.len())
            .then_with(|| a.length_m.total_cmp(&b.length_m))
            .then_with(|| Reverse(a.element.key()).cmp(&Reverse(b.element.key())))
    })?;
    let min_len = params.min_length_fraction * ctx.frame.ground_area_m2().sqrt();
    (winner.length_m >= min_len).then_some(winner)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Usability {
    Usable,
    Unusable,
}

pub fn usability_check(elements: &[OsmElement], ctx: &PatchContext, params: &SelectionParams) -> Usability {
    if select_area_element(elements, ctx, params).is_some() || select_nonarea_element(elements, ctx, params).is_some()
    {
        Usability::Usable
    } else {
        Usability::Unusable
    }
}
