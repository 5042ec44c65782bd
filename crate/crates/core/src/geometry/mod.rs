//! Geometry over patch-normalized coordinates.
//!
//! Everything here works in the unit square of a patch: `(0, 0)` is the
//! bottom-left corner and `(1, 1)` the top-right one. Raw OSM geometry is
//! first projected into meters with [`crate::geo::LocalProjection`], then
//! normalized against a [`PatchFrame`] and clipped.

mod attrs;
mod clip;
mod format;
mod measure;
mod path;
mod simplify;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoBBox, LocalProjection};

pub use attrs::{area_attributes, nonarea_attributes, AreaAttributes, AttributeParams, NonAreaAttributes};
pub use clip::{clip_and_normalize, clip_path, clip_rings, Clipped};
pub use format::{format_coord, format_geometry, format_parts};
pub use measure::{
    area_fraction, centroid, classify_shape, coarse_location, grid_label, perimeter, signed_ring_area, GridLabel,
    ShapeClass, ShapeThresholds,
};
pub use path::{path_length_m, path_metrics, Orientation, PathMetrics, Sinuosity, SinuosityThresholds};
pub use simplify::{simplify_dp, simplify_ring, DEFAULT_DP_EPSILON};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("geometry does not intersect the patch frame")]
    EmptyAfterClip,
    #[error("path has zero length")]
    DegeneratePath,
    #[error("input geometry is empty")]
    EmptyInput,
    #[error("invalid patch frame: {0}")]
    InvalidFrame(String),
}

/// Relative tolerance used when checking frame extent against pixel size.
const FRAME_REL_TOL: f64 = 1e-6;

/// Georeferenced extent of a single image patch in projected meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFrame {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub gsd_m: f64,
    pub capture_time: DateTime<Utc>,
}

impl PatchFrame {
    pub fn new(
        min_x: f64,
        min_y: f64,
        max_x: f64,
        max_y: f64,
        width_px: u32,
        height_px: u32,
        gsd_m: f64,
        capture_time: DateTime<Utc>,
    ) -> Result<Self, GeometryError> {
        let frame = Self { min_x, min_y, max_x, max_y, width_px, height_px, gsd_m, capture_time };
        frame.validate()?;
        Ok(frame)
    }

    /// Frame of `width_px` x `height_px` pixels centred on projected `(cx, cy)`.
    pub fn centered(
        cx: f64,
        cy: f64,
        width_px: u32,
        height_px: u32,
        gsd_m: f64,
        capture_time: DateTime<Utc>,
    ) -> Result<Self, GeometryError> {
        let hw = width_px as f64 * gsd_m / 2.0;
        let hh = height_px as f64 * gsd_m / 2.0;
        Self::new(cx - hw, cy - hh, cx + hw, cy + hh, width_px, height_px, gsd_m, capture_time)
    }

    /// Builds the frame for a lon/lat box at a given ground sample distance.
    /// The pixel size is the projected extent rounded to whole pixels; the
    /// frame is centred on the box centre in that box's local projection.
    pub fn from_geo(
        bbox: &GeoBBox,
        gsd_m: f64,
        capture_time: DateTime<Utc>,
    ) -> Result<(Self, LocalProjection), GeometryError> {
        if !bbox.is_valid() {
            return Err(GeometryError::InvalidFrame(format!("invalid bbox {bbox:?}")));
        }
        if !(gsd_m > 0.0 && gsd_m.is_finite()) {
            return Err(GeometryError::InvalidFrame(format!("gsd must be positive, got {gsd_m}")));
        }
        let proj = LocalProjection::new(bbox.center());
        let lo = proj.forward(crate::geo::GeoPoint::new(bbox.min_lon, bbox.min_lat));
        let hi = proj.forward(crate::geo::GeoPoint::new(bbox.max_lon, bbox.max_lat));
        let width_px = ((hi[0] - lo[0]) / gsd_m).round().max(1.0) as u32;
        let height_px = ((hi[1] - lo[1]) / gsd_m).round().max(1.0) as u32;
        let frame = Self::centered(0.0, 0.0, width_px, height_px, gsd_m, capture_time)?;
        Ok((frame, proj))
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let vals = [self.min_x, self.min_y, self.max_x, self.max_y, self.gsd_m];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidFrame("non-finite coordinate".into()));
        }
        if self.width_px == 0 || self.height_px == 0 || self.gsd_m <= 0.0 {
            return Err(GeometryError::InvalidFrame("pixel size and gsd must be positive".into()));
        }
        let check = |extent: f64, px: u32, axis: &str| {
            let expected = px as f64 * self.gsd_m;
            if ((extent - expected) / expected).abs() > FRAME_REL_TOL {
                Err(GeometryError::InvalidFrame(format!(
                    "{axis} extent {extent} does not match {px} px x {} m",
                    self.gsd_m
                )))
            } else {
                Ok(())
            }
        };
        check(self.max_x - self.min_x, self.width_px, "x")?;
        check(self.max_y - self.min_y, self.height_px, "y")
    }

    pub fn width_m(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height_m(&self) -> f64 {
        self.max_y - self.min_y
    }

    /// Ground area in square meters, from pixel counts and the gsd.
    pub fn ground_area_m2(&self) -> f64 {
        (self.width_px as f64 * self.height_px as f64) * (self.gsd_m * self.gsd_m)
    }

    pub fn normalize(&self, xy: [f64; 2]) -> NormPoint {
        NormPoint::new((xy[0] - self.min_x) / self.width_m(), (xy[1] - self.min_y) / self.height_m())
    }

    pub fn denormalize(&self, p: NormPoint) -> [f64; 2] {
        [self.min_x + p.x * self.width_m(), self.min_y + p.y * self.height_m()]
    }
}

/// A point in patch-normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPoint {
    pub x: f64,
    pub y: f64,
}

impl NormPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: NormPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<(f64, f64)> for NormPoint {
    fn from((x, y): (f64, f64)) -> Self {
        Self::new(x, y)
    }
}

pub type Ring = Vec<NormPoint>;

/// Closed rings in normalized coordinates. Counter-clockwise rings add area,
/// clockwise rings (holes) subtract it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RingSet {
    pub rings: Vec<Ring>,
}

impl RingSet {
    pub fn new(rings: Vec<Ring>) -> Self {
        Self { rings }
    }

    /// Rings with positive orientation.
    pub fn outer_rings(&self) -> impl Iterator<Item = &Ring> {
        self.rings.iter().filter(|r| signed_ring_area(r) > 0.0)
    }
}

/// A possibly multi-part polyline in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Path {
    pub parts: Vec<Vec<NormPoint>>,
}

impl Path {
    pub fn new(parts: Vec<Vec<NormPoint>>) -> Self {
        Self { parts }
    }

    pub fn first_point(&self) -> Option<NormPoint> {
        self.parts.first().and_then(|p| p.first().copied())
    }

    pub fn last_point(&self) -> Option<NormPoint> {
        self.parts.last().and_then(|p| p.last().copied())
    }
}

/// Geometry in projected meters before clipping.
#[derive(Debug, Clone, PartialEq)]
pub enum RawGeometry {
    /// Closed rings; orientation encodes outer (CCW) vs hole (CW).
    Rings(Vec<Vec<[f64; 2]>>),
    /// Polyline parts.
    Lines(Vec<Vec<[f64; 2]>>),
}
