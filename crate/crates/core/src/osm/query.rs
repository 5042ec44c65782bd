use chrono::{DateTime, Months, SecondsFormat, Utc};

use super::OsmError;
use crate::geo::{GeoBBox, GeoPoint};

pub const QUERY_TIMEOUT_S: u32 = 180;

/// Calendar-month addition; the day clamps to the end of a shorter month.
pub fn one_month_after(t: DateTime<Utc>) -> DateTime<Utc> {
    t.checked_add_months(Months::new(1)).unwrap_or(t)
}

fn header(as_of: DateTime<Utc>) -> String {
    format!(
        "[out:json][timeout:{QUERY_TIMEOUT_S}][date:\"{}\"];\n",
        as_of.to_rfc3339_opts(SecondsFormat::Secs, true)
    )
}

/// Ways and relations intersecting the box, as of `as_of`.
pub fn build_query_step1(bbox: &GeoBBox, as_of: DateTime<Utc>) -> Result<String, OsmError> {
    if !bbox.is_valid() {
        return Err(OsmError::InvalidBBox(format!(
            "({}, {}, {}, {})",
            bbox.min_lon, bbox.min_lat, bbox.max_lon, bbox.max_lat
        )));
    }
    let b = format!("{},{},{},{}", bbox.min_lat, bbox.min_lon, bbox.max_lat, bbox.max_lon);
    Ok(format!("{}(\n  way({b});\n  relation({b});\n);\nout geom;\n", header(as_of)))
}

/// Ways and relations forming areas that enclose `center`.
pub fn build_query_step2(center: GeoPoint, as_of: DateTime<Utc>) -> Result<String, OsmError> {
    let ok = center.lon.is_finite()
        && center.lat.is_finite()
        && (-180.0..=180.0).contains(&center.lon)
        && (-90.0..=90.0).contains(&center.lat);
    if !ok {
        return Err(OsmError::InvalidPoint(format!("({}, {})", center.lon, center.lat)));
    }
    Ok(format!(
        "{}is_in({},{})->.enclosing;\n(\n  way(pivot.enclosing);\n  relation(pivot.enclosing);\n);\nout geom;\n",
        header(as_of),
        center.lat,
        center.lon
    ))
}
