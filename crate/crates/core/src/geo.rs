//! Geodetic coordinates and the local metric projection used to place OSM
//! geometry onto a patch frame.

use serde::{Deserialize, Serialize};

/// WGS84 semi-major axis in meters.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

/// Axis-aligned lon/lat box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl GeoBBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        Self { min_lon, min_lat, max_lon, max_lat }
    }

    /// True when the box has positive extent on both axes and sits inside the
    /// valid lon/lat range.
    pub fn is_valid(&self) -> bool {
        let finite = [self.min_lon, self.min_lat, self.max_lon, self.max_lat]
            .iter()
            .all(|v| v.is_finite());
        finite
            && self.min_lon < self.max_lon
            && self.min_lat < self.max_lat
            && self.min_lon >= -180.0
            && self.max_lon <= 180.0
            && self.min_lat >= -90.0
            && self.max_lat <= 90.0
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new(
            (self.min_lon + self.max_lon) / 2.0,
            (self.min_lat + self.max_lat) / 2.0,
        )
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lon >= self.min_lon && p.lon <= self.max_lon && p.lat >= self.min_lat && p.lat <= self.max_lat
    }
}

/// Local equirectangular projection centred on an origin. Accurate to well
/// under a pixel across a single patch, which is all the pipeline needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub origin: GeoPoint,
}

impl LocalProjection {
    pub fn new(origin: GeoPoint) -> Self {
        Self { origin }
    }

    fn meters_per_deg_lon(&self) -> f64 {
        EARTH_RADIUS_M * self.origin.lat.to_radians().cos() * std::f64::consts::PI / 180.0
    }

    fn meters_per_deg_lat(&self) -> f64 {
        EARTH_RADIUS_M * std::f64::consts::PI / 180.0
    }

    /// lon/lat to (east, north) meters relative to the origin.
    pub fn forward(&self, p: GeoPoint) -> [f64; 2] {
        [
            (p.lon - self.origin.lon) * self.meters_per_deg_lon(),
            (p.lat - self.origin.lat) * self.meters_per_deg_lat(),
        ]
    }

    pub fn inverse(&self, xy: [f64; 2]) -> GeoPoint {
        GeoPoint::new(
            self.origin.lon + xy[0] / self.meters_per_deg_lon(),
            self.origin.lat + xy[1] / self.meters_per_deg_lat(),
        )
    }
}
