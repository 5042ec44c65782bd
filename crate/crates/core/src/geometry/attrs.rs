use serde::{Deserialize, Serialize};

use super::format::{format_coord, format_parts};
use super::measure::{area_fraction, classify_shape, coarse_location, GridLabel, ShapeClass, ShapeThresholds};
use super::path::{path_metrics, Orientation, Sinuosity, SinuosityThresholds};
use super::simplify::{simplify_dp, simplify_ring, DEFAULT_DP_EPSILON};
use super::{GeometryError, Path, PatchFrame, RingSet};

/// Tunables for attribute extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeParams {
    pub dp_epsilon: f64,
    pub shape: ShapeThresholds,
    pub sinuosity: SinuosityThresholds,
}

impl Default for AttributeParams {
    fn default() -> Self {
        Self {
            dp_epsilon: DEFAULT_DP_EPSILON,
            shape: ShapeThresholds::default(),
            sinuosity: SinuosityThresholds::default(),
        }
    }
}

/// Interpreted attributes of an area element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaAttributes {
    pub coarse_location: GridLabel,
    pub shape: ShapeClass,
    pub normalized_size: f64,
    pub simplified_geometry: String,
    pub is_cropped: bool,
}

impl AreaAttributes {
    pub fn size_str(&self) -> String {
        format_coord(self.normalized_size)
    }
}

/// Interpreted attributes of a linear element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonAreaAttributes {
    pub endpoint_locations: (GridLabel, GridLabel),
    pub sinuosity: Sinuosity,
    pub normalized_length: f64,
    pub length_m: u64,
    pub orientation: Orientation,
    pub simplified_geometry: String,
    pub is_cropped: bool,
}

impl NonAreaAttributes {
    pub fn normalized_length_str(&self) -> String {
        format_coord(self.normalized_length)
    }

    pub fn endpoints_str(&self) -> String {
        format!("({}, {})", self.endpoint_locations.0, self.endpoint_locations.1)
    }
}

pub fn area_attributes(rings: &RingSet, is_cropped: bool, params: &AttributeParams) -> AreaAttributes {
    let outer: Vec<_> = rings.outer_rings().map(|r| simplify_ring(r, params.dp_epsilon)).collect();
    AreaAttributes {
        coarse_location: coarse_location(rings),
        shape: classify_shape(rings, &params.shape),
        normalized_size: area_fraction(rings),
        simplified_geometry: format_parts(&outer),
        is_cropped,
    }
}

pub fn nonarea_attributes(
    path: &Path,
    frame: &PatchFrame,
    is_cropped: bool,
    params: &AttributeParams,
) -> Result<NonAreaAttributes, GeometryError> {
    let m = path_metrics(path, frame, &params.sinuosity)?;
    let parts: Vec<_> = path.parts.iter().map(|p| simplify_dp(p, params.dp_epsilon)).collect();
    Ok(NonAreaAttributes {
        endpoint_locations: m.endpoints,
        sinuosity: m.sinuosity,
        normalized_length: m.normalized_length,
        length_m: m.length_m,
        orientation: m.orientation,
        simplified_geometry: format_parts(&parts),
        is_cropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::NormPoint;

    #[test]
    fn rectangle_attributes() {
        let ring: Vec<NormPoint> = [(0.25, 0.2), (0.75, 0.2), (0.75, 0.8), (0.25, 0.8), (0.25, 0.2)]
            .iter()
            .map(|&p| p.into())
            .collect();
        let a = area_attributes(&RingSet::new(vec![ring]), false, &AttributeParams::default());
        assert_eq!(a.coarse_location, GridLabel::Center);
        assert_eq!(a.size_str(), "0.300");
        assert_eq!(a.shape, ShapeClass::Square);
        assert_eq!(
            a.simplified_geometry,
            "{[(0.250, 0.200), (0.750, 0.200), (0.750, 0.800), (0.250, 0.800), (0.250, 0.200)]}"
        );
    }
}
