use std::time::Duration;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    build_query_step1, build_query_step2, classify_element, merge_dedupe, parse_response, ElementClass, OsmElement,
    OsmError,
};
use crate::geo::{GeoBBox, GeoPoint};
use crate::net::{with_retries, Attempt, InFlightLimit, RetryError, RetryPolicy, TokenBucket};

/// Anything that can answer an OverpassQL query with a JSON document.
pub trait OverpassBackend: Send + Sync {
    fn execute(&self, query: &str) -> Result<Vec<u8>, OsmError>;
}

/// Runs both queries for a patch and merges the results; step-one copies win.
pub fn fetch_patch_elements(
    backend: &dyn OverpassBackend,
    bbox: &GeoBBox,
    as_of: DateTime<Utc>,
    fetched_at: DateTime<Utc>,
) -> Result<Vec<OsmElement>, OsmError> {
    let q1 = build_query_step1(bbox, as_of)?;
    let q2 = build_query_step2(bbox.center(), as_of)?;
    let step1 = parse_response(&backend.execute(&q1)?, fetched_at)?.elements;
    let step2 = parse_response(&backend.execute(&q2)?, fetched_at)?.elements;
    Ok(merge_dedupe(step1, step2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverpassConfig {
    pub endpoint: String,
    pub requests_per_second: f64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for OverpassConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://overpass-api.de/api/interpreter".into(),
            // about 8,600 requests a day, inside the public instance's 10k limit
            requests_per_second: 0.1,
            max_in_flight: 2,
            timeout_secs: 200,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpOverpass {
    client: reqwest::blocking::Client,
    config: OverpassConfig,
    bucket: TokenBucket,
    gate: InFlightLimit,
}

impl HttpOverpass {
    pub fn new(config: OverpassConfig) -> Result<Self, OsmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .user_agent(concat!("geocaption/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| OsmError::Unavailable { attempts: 0, last: e.to_string() })?;
        Ok(Self {
            client,
            bucket: TokenBucket::new(config.requests_per_second, 1),
            gate: InFlightLimit::new(config.max_in_flight),
            config,
        })
    }
}

impl OverpassBackend for HttpOverpass {
    fn execute(&self, query: &str) -> Result<Vec<u8>, OsmError> {
        let _permit = self.gate.acquire();
        let res = with_retries(&self.config.retry, |_| {
            self.bucket.acquire();
            let resp = match self.client.post(&self.config.endpoint).form(&[("data", query)]).send() {
                Ok(r) => r,
                Err(e) => return Attempt::Retry((0, e.to_string())),
            };
            let status = resp.status();
            if status.is_success() {
                return match resp.bytes() {
                    Ok(b) => Attempt::Done(b.to_vec()),
                    Err(e) => Attempt::Retry((0, e.to_string())),
                };
            }
            let body = resp.text().unwrap_or_default();
            if status.as_u16() == 429 || status.is_server_error() {
                Attempt::Retry((status.as_u16(), body))
            } else {
                Attempt::Fail((status.as_u16(), body))
            }
        });
        res.map_err(|e| match e {
            RetryError::Exhausted { attempts, last: (status, body) } => {
                OsmError::Unavailable { attempts, last: format!("status {status}: {body}") }
            }
            RetryError::Fatal((status, body)) => OsmError::BadRequest { status, body },
        })
    }
}

/// In-memory Overpass stand-in that evaluates the two query shapes this
/// crate emits against a fixed element set.
pub struct FixtureOverpass {
    elements: Vec<(OsmElement, Value)>,
    date_re: Regex,
    bbox_re: Regex,
    is_in_re: Regex,
}

impl FixtureOverpass {
    /// Loads an Overpass-style JSON document (`{"elements": [...]}` with
    /// inline geometry). Elements may carry an ISO `timestamp`; those newer
    /// than a query's date are hidden from it.
    pub fn from_json(body: &[u8]) -> Result<Self, OsmError> {
        let epoch = DateTime::<Utc>::UNIX_EPOCH;
        let doc: Value =
            serde_json::from_slice(body).map_err(|e| OsmError::Fixture(format!("unreadable fixture: {e}")))?;
        let raw = doc.get("elements").and_then(Value::as_array).cloned().unwrap_or_default();
        let mut elements = Vec::new();
        for item in raw {
            let single = json!({ "elements": [item.clone()] });
            let parsed = parse_response(single.to_string().as_bytes(), epoch)?;
            if let Some(e) = parsed.elements.into_iter().next() {
                elements.push((e, item));
            }
        }
        Ok(Self {
            elements,
            date_re: Regex::new(r#"\[date:"([^"]+)"\]"#).unwrap(),
            bbox_re: Regex::new(r"way\(\s*([-0-9.eE]+)\s*,\s*([-0-9.eE]+)\s*,\s*([-0-9.eE]+)\s*,\s*([-0-9.eE]+)\s*\)")
                .unwrap(),
            is_in_re: Regex::new(r"is_in\(\s*([-0-9.eE]+)\s*,\s*([-0-9.eE]+)\s*\)").unwrap(),
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    fn visible_at(item: &Value, as_of: Option<DateTime<Utc>>) -> bool {
        let (Some(as_of), Some(ts)) = (as_of, item.get("timestamp").and_then(Value::as_str)) else {
            return true;
        };
        DateTime::parse_from_rfc3339(ts).map_or(true, |t| t.with_timezone(&Utc) <= as_of)
    }
}

fn num(s: &str) -> Result<f64, OsmError> {
    s.parse().map_err(|_| OsmError::Fixture(format!("bad number in query: {s}")))
}

fn segment_hits_box(a: GeoPoint, b: GeoPoint, bbox: &GeoBBox) -> bool {
    if bbox.contains(a) || bbox.contains(b) {
        return true;
    }
    // Liang-Barsky against the box
    let (dx, dy) = (b.lon - a.lon, b.lat - a.lat);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-dx, a.lon - bbox.min_lon),
        (dx, bbox.max_lon - a.lon),
        (-dy, a.lat - bbox.min_lat),
        (dy, bbox.max_lat - a.lat),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else if p < 0.0 {
            t0 = t0.max(q / p);
        } else {
            t1 = t1.min(q / p);
        }
    }
    t0 <= t1
}

fn ring_contains(ring: &[GeoPoint], p: GeoPoint) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

impl OverpassBackend for FixtureOverpass {
    fn execute(&self, query: &str) -> Result<Vec<u8>, OsmError> {
        let as_of = self
            .date_re
            .captures(query)
            .and_then(|c| DateTime::parse_from_rfc3339(&c[1]).ok())
            .map(|t| t.with_timezone(&Utc));
        let matches: Vec<&Value> = if let Some(c) = self.is_in_re.captures(query) {
            let p = GeoPoint::new(num(&c[2])?, num(&c[1])?);
            self.elements
                .iter()
                .filter(|(e, _)| {
                    // any closed, tagged way or multipolygon forms an Overpass area
                    let area_like = classify_element(e) == ElementClass::Area
                        || (e.is_closed() && !e.tags.is_empty());
                    area_like && {
                        let hits = e.parts.iter().filter(|part| part.is_closed() && ring_contains(&part.coords, p));
                        hits.count() % 2 == 1
                    }
                })
                .filter(|(_, raw)| Self::visible_at(raw, as_of))
                .map(|(_, raw)| raw)
                .collect()
        } else if let Some(c) = self.bbox_re.captures(query) {
            let bbox = GeoBBox::new(num(&c[2])?, num(&c[1])?, num(&c[4])?, num(&c[3])?);
            self.elements
                .iter()
                .filter(|(e, _)| {
                    e.parts.iter().any(|part| part.coords.windows(2).any(|w| segment_hits_box(w[0], w[1], &bbox)))
                })
                .filter(|(_, raw)| Self::visible_at(raw, as_of))
                .map(|(_, raw)| raw)
                .collect()
        } else {
            return Err(OsmError::Fixture("unsupported query shape".into()));
        };
        Ok(json!({ "version": 0.6, "generator": "geocaption-fixture", "elements": matches })
            .to_string()
            .into_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn lake_fixture() -> FixtureOverpass {
        // a lake ring well outside the 0.01 degree patch at the origin, plus a
        // road crossing the patch
        let doc = json!({"elements": [
            {"type": "way", "id": 1, "tags": {"natural": "water", "name": "Big Lake"},
             "geometry": [
                {"lat": -1.0, "lon": -1.0}, {"lat": -1.0, "lon": 1.0},
                {"lat": 1.0, "lon": 1.0}, {"lat": 1.0, "lon": -1.0}, {"lat": -1.0, "lon": -1.0}]},
            {"type": "way", "id": 2, "tags": {"highway": "track"},
             "geometry": [{"lat": -0.02, "lon": 0.0}, {"lat": 0.02, "lon": 0.0}]},
            {"type": "way", "id": 3, "tags": {"highway": "track"}, "timestamp": "2030-01-01T00:00:00Z",
             "geometry": [{"lat": -0.02, "lon": 0.001}, {"lat": 0.02, "lon": 0.001}]}
        ]});
        FixtureOverpass::from_json(doc.to_string().as_bytes()).unwrap()
    }

    #[test]
    fn two_step_finds_enclosing_lake() {
        let f = lake_fixture();
        let bbox = GeoBBox::new(-0.005, -0.005, 0.005, 0.005);
        let as_of = Utc.with_ymd_and_hms(2022, 1, 15, 0, 0, 0).unwrap();
        let step1 = parse_response(&f.execute(&build_query_step1(&bbox, as_of).unwrap()).unwrap(), as_of).unwrap();
        assert!(step1.elements.iter().all(|e| e.id != 1));
        assert_eq!(step1.elements.len(), 1, "future element must be hidden");
        let merged = fetch_patch_elements(&f, &bbox, as_of, as_of).unwrap();
        assert!(merged.iter().any(|e| e.id == 1));
    }

    #[test]
    fn land_point_has_no_enclosing_feature() {
        let f = lake_fixture();
        let q = build_query_step2(GeoPoint::new(5.0, 5.0), Utc::now()).unwrap();
        let r = parse_response(&f.execute(&q).unwrap(), Utc::now()).unwrap();
        assert!(r.elements.is_empty());
    }
}
