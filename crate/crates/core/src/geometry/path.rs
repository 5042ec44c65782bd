use std::fmt;

use serde::{Deserialize, Serialize};

use super::measure::{grid_label, GridLabel};
use super::{GeometryError, NormPoint, Path, PatchFrame};

/// Endpoints closer than this (normalized units) make a path "closed".
const CLOSED_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sinuosity {
    Straight,
    Curved,
    Twisted,
    Closed,
    Broken,
}

impl Sinuosity {
    pub fn as_str(self) -> &'static str {
        match self {
            Sinuosity::Straight => "straight",
            Sinuosity::Curved => "curved",
            Sinuosity::Twisted => "twisted",
            Sinuosity::Closed => "closed",
            Sinuosity::Broken => "broken",
        }
    }
}

impl fmt::Display for Sinuosity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    #[serde(rename = "W_E")]
    WestEast,
    #[serde(rename = "SW_NE")]
    SouthwestNortheast,
    #[serde(rename = "S_N")]
    SouthNorth,
    #[serde(rename = "NW_SE")]
    NorthwestSoutheast,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::WestEast => "W_E",
            Orientation::SouthwestNortheast => "SW_NE",
            Orientation::SouthNorth => "S_N",
            Orientation::NorthwestSoutheast => "NW_SE",
        }
    }

    /// Bins the direction of `(dx, dy)` into 45 degree sectors, treating a
    /// vector and its negation as the same direction.
    pub fn from_vector(dx: f64, dy: f64) -> Self {
        let (dx, dy) = if dy < 0.0 || (dy == 0.0 && dx < 0.0) { (-dx, -dy) } else { (dx, dy) };
        let deg = dy.atan2(dx).to_degrees();
        if !(22.5..157.5).contains(&deg) {
            Orientation::WestEast
        } else if deg < 67.5 {
            Orientation::SouthwestNortheast
        } else if deg < 112.5 {
            Orientation::SouthNorth
        } else {
            Orientation::NorthwestSoutheast
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinuosityThresholds {
    /// Ratios below this are "straight".
    pub straight_below: f64,
    /// Ratios at or above this are "twisted"; in between is "curved".
    pub twisted_from: f64,
}

impl Default for SinuosityThresholds {
    fn default() -> Self {
        Self { straight_below: 1.05, twisted_from: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    /// Rounded ground length.
    pub length_m: u64,
    pub exact_length_m: f64,
    /// Length over the square root of the patch ground area.
    pub normalized_length: f64,
    pub endpoints: (GridLabel, GridLabel),
    pub sinuosity: Sinuosity,
    /// Path length over straight endpoint distance; infinite for closed paths.
    pub ratio: f64,
    pub orientation: Orientation,
}

fn to_meters(p: NormPoint, frame: &PatchFrame) -> (f64, f64) {
    (p.x * frame.width_m(), p.y * frame.height_m())
}

/// Ground length of all parts in meters.
pub fn path_length_m(p: &Path, frame: &PatchFrame) -> f64 {
    p.parts
        .iter()
        .flat_map(|part| part.windows(2))
        .map(|w| {
            let (ax, ay) = to_meters(w[0], frame);
            let (bx, by) = to_meters(w[1], frame);
            (bx - ax).hypot(by - ay)
        })
        .sum()
}

pub fn path_metrics(p: &Path, frame: &PatchFrame, t: &SinuosityThresholds) -> Result<PathMetrics, GeometryError> {
    let (first, last) = match (p.first_point(), p.last_point()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(GeometryError::EmptyInput),
    };
    let length = path_length_m(p, frame);
    if length <= 0.0 {
        return Err(GeometryError::DegeneratePath);
    }
    let (ax, ay) = to_meters(first, frame);
    let (bx, by) = to_meters(last, frame);
    let chord = (bx - ax).hypot(by - ay);
    let closed = first.dist(last) <= CLOSED_EPS;
    let ratio = if closed { f64::INFINITY } else { length / chord };

    let sinuosity = if p.parts.len() > 1 {
        Sinuosity::Broken
    } else if closed {
        Sinuosity::Closed
    } else if ratio < t.straight_below {
        Sinuosity::Straight
    } else if ratio < t.twisted_from {
        Sinuosity::Curved
    } else {
        Sinuosity::Twisted
    };

    let orientation = if closed {
        // endpoints coincide: use the direction to the farthest vertex
        let far = p
            .parts
            .iter()
            .flatten()
            .map(|&q| to_meters(q, frame))
            .max_by(|u, v| {
                let du = (u.0 - ax).hypot(u.1 - ay);
                let dv = (v.0 - ax).hypot(v.1 - ay);
                du.total_cmp(&dv)
            })
            .unwrap_or((bx, by));
        Orientation::from_vector(far.0 - ax, far.1 - ay)
    } else {
        Orientation::from_vector(bx - ax, by - ay)
    };

    Ok(PathMetrics {
        length_m: length.round() as u64,
        exact_length_m: length,
        normalized_length: length / frame.ground_area_m2().sqrt(),
        endpoints: (grid_label(first), grid_label(last)),
        sinuosity,
        ratio,
        orientation,
    })
}
