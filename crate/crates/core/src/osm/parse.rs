use chrono::{DateTime, Utc};
use serde_json::Value;

use super::{ElementKind, GeoPart, OsmElement, OsmError, OsmTag, PartRole};
use crate::geo::GeoPoint;

#[derive(Debug, Clone, Default)]
pub struct ParsedResponse {
    pub elements: Vec<OsmElement>,
    /// Members or ways dropped because their geometry was missing or could
    /// not be assembled.
    pub skipped: usize,
}

fn byte_offset(body: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut cur = 1;
    for (i, &b) in body.iter().enumerate() {
        if cur == line {
            return (i + column.saturating_sub(1)).min(body.len());
        }
        if b == b'\n' {
            cur += 1;
        }
    }
    body.len()
}

/// Parses an Overpass JSON response produced with `out geom`. Nodes and
/// derived areas are ignored.
pub fn parse_response(body: &[u8], fetched_at: DateTime<Utc>) -> Result<ParsedResponse, OsmError> {
    let doc: Value = serde_json::from_slice(body).map_err(|e| OsmError::Parse {
        offset: byte_offset(body, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let items = match doc.get("elements") {
        Some(Value::Array(items)) => items,
        Some(_) => return Err(OsmError::Parse { offset: 0, message: "`elements` is not an array".into() }),
        None => return Err(OsmError::Parse { offset: 0, message: "missing `elements`".into() }),
    };
    let mut out = ParsedResponse::default();
    for item in items {
        let kind = match item.get("type").and_then(Value::as_str) {
            Some("way") => ElementKind::Way,
            Some("relation") => ElementKind::Relation,
            _ => continue,
        };
        let Some(id) = item.get("id").and_then(Value::as_i64) else {
            out.skipped += 1;
            continue;
        };
        let tags = parse_tags(item);
        let parts = match kind {
            ElementKind::Way => match parse_coords(item.get("geometry")) {
                Some(coords) if coords.len() >= 2 => vec![GeoPart { role: PartRole::Plain, coords }],
                _ => {
                    out.skipped += 1;
                    continue;
                }
            },
            ElementKind::Relation => {
                let multipolygon = tags.iter().any(|t| t.key == "type" && t.value == "multipolygon");
                let (parts, skipped) = assemble_relation(item, multipolygon);
                out.skipped += skipped;
                if parts.is_empty() {
                    out.skipped += 1;
                    continue;
                }
                parts
            }
        };
        out.elements.push(OsmElement { id, kind, tags, parts, fetched_at });
    }
    if out.skipped > 0 {
        log::warn!("skipped {} malformed OSM members", out.skipped);
    }
    Ok(out)
}

fn parse_tags(item: &Value) -> Vec<OsmTag> {
    match item.get("tags") {
        Some(Value::Object(map)) => map
            .iter()
            .filter(|(k, _)| !k.is_empty())
            .map(|(k, v)| OsmTag::new(k.clone(), v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string())))
            .collect(),
        _ => Vec::new(),
    }
}

fn parse_coords(geom: Option<&Value>) -> Option<Vec<GeoPoint>> {
    let arr = geom?.as_array()?;
    let mut pts = Vec::with_capacity(arr.len());
    for p in arr {
        // Overpass emits null for nodes outside the requested extent
        let (Some(lat), Some(lon)) = (p.get("lat").and_then(Value::as_f64), p.get("lon").and_then(Value::as_f64))
        else {
            continue;
        };
        pts.push(GeoPoint::new(lon, lat));
    }
    Some(pts)
}

fn ring_signed_area(ring: &[GeoPoint]) -> f64 {
    ring.windows(2).map(|w| w[0].lon * w[1].lat - w[1].lon * w[0].lat).sum::<f64>() / 2.0
}

fn assemble_relation(item: &Value, multipolygon: bool) -> (Vec<GeoPart>, usize) {
    let mut skipped = 0;
    let mut outer = Vec::new();
    let mut inner = Vec::new();
    let mut plain = Vec::new();
    let members = item.get("members").and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]);
    for m in members {
        if m.get("type").and_then(Value::as_str) != Some("way") {
            continue;
        }
        let coords = match parse_coords(m.get("geometry")) {
            Some(c) if c.len() >= 2 => c,
            _ => {
                skipped += 1;
                continue;
            }
        };
        match (multipolygon, m.get("role").and_then(Value::as_str).unwrap_or("")) {
            (true, "inner") => inner.push(coords),
            (true, _) => outer.push(coords),
            (false, _) => plain.push(coords),
        }
    }
    let mut parts = Vec::new();
    if multipolygon {
        for (ways, role) in [(outer, PartRole::Outer), (inner, PartRole::Inner)] {
            let (closed, open) = join_chains(ways);
            skipped += open.len();
            for mut ring in closed {
                let a = ring_signed_area(&ring);
                if (role == PartRole::Outer && a < 0.0) || (role == PartRole::Inner && a > 0.0) {
                    ring.reverse();
                }
                parts.push(GeoPart { role, coords: ring });
            }
        }
    } else {
        let (closed, open) = join_chains(plain);
        parts.extend(closed.into_iter().chain(open).map(|coords| GeoPart { role: PartRole::Plain, coords }));
    }
    (parts, skipped)
}

/// Joins linestrings that share endpoints. Returns (closed rings, open chains).
pub(crate) fn join_chains(mut ways: Vec<Vec<GeoPoint>>) -> (Vec<Vec<GeoPoint>>, Vec<Vec<GeoPoint>>) {
    let mut closed = Vec::new();
    let mut open = Vec::new();
    ways.reverse();
    while let Some(mut chain) = ways.pop() {
        loop {
            if chain.len() >= 4 && chain.first() == chain.last() {
                break;
            }
            let end = *chain.last().unwrap();
            let start = chain[0];
            let found = ways.iter().rposition(|w| {
                w.first() == Some(&end) || w.last() == Some(&end) || w.first() == Some(&start) || w.last() == Some(&start)
            });
            let Some(i) = found else { break };
            let mut w = ways.remove(i);
            if w.first() == Some(&end) {
                chain.extend_from_slice(&w[1..]);
            } else if w.last() == Some(&end) {
                w.reverse();
                chain.extend_from_slice(&w[1..]);
            } else if w.last() == Some(&start) {
                w.extend_from_slice(&chain[1..]);
                chain = w;
            } else {
                w.reverse();
                w.extend_from_slice(&chain[1..]);
                chain = w;
            }
        }
        if chain.len() >= 4 && chain.first() == chain.last() {
            closed.push(chain);
        } else {
            open.push(chain);
        }
    }
    (closed, open)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn now() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2022-01-01T00:00:00Z").unwrap().with_timezone(&Utc)
    }

    const FIXTURE: &str = r#"{
      "version": 0.6,
      "elements": [
        {"type": "node", "id": 1, "lat": 0.0, "lon": 0.0},
        {"type": "way", "id": 10, "tags": {"highway": "residential", "name": "Main St"},
         "geometry": [{"lat": 0.0, "lon": 0.0}, {"lat": 0.001, "lon": 0.001}]},
        {"type": "way", "id": 11, "tags": {"landuse": "farmland"},
         "geometry": [{"lat": 0.0, "lon": 0.0}, {"lat": 0.0, "lon": 0.001}, {"lat": 0.001, "lon": 0.001}, {"lat": 0.0, "lon": 0.0}]},
        {"type": "way", "id": 12, "tags": {"waterway": "stream"},
         "geometry": [{"lat": 0.0, "lon": 0.002}, {"lat": 0.001, "lon": 0.002}]},
        {"type": "relation", "id": 20, "tags": {"type": "multipolygon", "natural": "water"},
         "members": [
           {"type": "way", "ref": 100, "role": "outer", "geometry": [{"lat": 0, "lon": 0}, {"lat": 0, "lon": 1}]},
           {"type": "way", "ref": 101, "role": "outer", "geometry": [{"lat": 0, "lon": 1}, {"lat": 1, "lon": 1}, {"lat": 0, "lon": 0}]},
           {"type": "way", "ref": 102, "role": "outer", "geometry": [{"lat": 5, "lon": 5}, {"lat": 5, "lon": 6}, {"lat": 6, "lon": 6}, {"lat": 5, "lon": 5}]},
           {"type": "way", "ref": 103, "role": "inner"},
           {"type": "node", "ref": 7, "role": ""}
         ]}
      ]
    }"#;

    #[test]
    fn counts_ways_and_relations() {
        let r = parse_response(FIXTURE.as_bytes(), now()).unwrap();
        assert_eq!(r.elements.len(), 4);
        assert_eq!(r.skipped, 1);
        let rel = r.elements.iter().find(|e| e.kind == ElementKind::Relation).unwrap();
        assert_eq!(rel.parts.len(), 2);
        assert!(rel.parts.iter().all(|p| p.is_closed() && p.role == PartRole::Outer));
        assert!(rel.parts.iter().all(|p| ring_signed_area(&p.coords) > 0.0));
    }

    #[test]
    fn tag_order_is_preserved() {
        let r = parse_response(FIXTURE.as_bytes(), now()).unwrap();
        let keys: Vec<_> = r.elements[0].tags.iter().map(|t| t.key.as_str()).collect();
        assert_eq!(keys, ["highway", "name"]);
    }

    #[test]
    fn empty_elements() {
        let r = parse_response(br#"{"elements": []}"#, now()).unwrap();
        assert!(r.elements.is_empty());
    }

    #[test]
    fn malformed_reports_offset() {
        let body = b"{\"elements\": [\n  {\"type\": \"way\",, }]}";
        match parse_response(body, now()) {
            Err(OsmError::Parse { offset, .. }) => assert!(offset > 15 && offset < body.len(), "{offset}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn join_reverses_when_needed() {
        let a = vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(1.0, 0.0)];
        let b = vec![GeoPoint::new(1.0, 1.0), GeoPoint::new(1.0, 0.0)];
        let c = vec![GeoPoint::new(1.0, 1.0), GeoPoint::new(0.0, 0.0)];
        let (closed, open) = join_chains(vec![a, b, c]);
        assert_eq!(closed.len(), 1);
        assert!(open.is_empty());
        assert_eq!(closed[0].len(), 4);
    }
}
