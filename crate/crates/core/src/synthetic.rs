//! Synthetic fixtures: a patch index with small PPM images and an
//! Overpass-style element set covering the cases the pipeline has to handle
//! (large and small areas, multipolygons with holes, enclosing lakes only
//! visible to the second query, roads and streams, admin-only patches and
//! elements newer than the capture date).

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::geo::{GeoPoint, LocalProjection};
use crate::pipeline::IMAGE_EXTENSIONS;

/// Half the side of a 448 px patch at 0.6 m/px.
const HALF_SIDE_M: f64 = 134.4;
const GSD_M: f64 = 0.6;
const SPACING_DEG: f64 = 0.02;
const IMAGE_SIDE: usize = 16;

#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub images_dir: PathBuf,
    pub osm_path: PathBuf,
    pub patch_ids: Vec<String>,
}

struct Builder {
    elements: Vec<Value>,
    next_id: i64,
}

impl Builder {
    fn id(&mut self) -> i64 {
        self.next_id += 1;
        self.next_id
    }

    fn coords(proj: &LocalProjection, pts: &[[f64; 2]]) -> Value {
        Value::Array(
            pts.iter()
                .map(|&xy| {
                    let g = proj.inverse(xy);
                    json!({"lat": round7(g.lat), "lon": round7(g.lon)})
                })
                .collect(),
        )
    }

    fn way(&mut self, proj: &LocalProjection, tags: Value, pts: &[[f64; 2]]) -> i64 {
        let id = self.id();
        self.elements.push(json!({"type": "way", "id": id, "tags": tags, "geometry": Self::coords(proj, pts)}));
        id
    }

    fn future_way(&mut self, proj: &LocalProjection, tags: Value, pts: &[[f64; 2]]) {
        let id = self.id();
        self.elements.push(json!({
            "type": "way", "id": id, "tags": tags, "timestamp": "2099-01-01T00:00:00Z",
            "geometry": Self::coords(proj, pts)
        }));
    }

    fn multipolygon(&mut self, proj: &LocalProjection, tags: Value, outer: &[[f64; 2]], inner: &[[f64; 2]]) {
        let id = self.id();
        // the outer ring is split in two member ways to exercise joining
        let mid = outer.len() / 2;
        let (a, b) = (&outer[..=mid], &outer[mid..]);
        let (ra, rb, ri) = (self.id(), self.id(), self.id());
        self.elements.push(json!({
            "type": "relation", "id": id, "tags": tags,
            "members": [
                {"type": "way", "ref": ra, "role": "outer", "geometry": Self::coords(proj, a)},
                {"type": "way", "ref": rb, "role": "outer", "geometry": Self::coords(proj, b)},
                {"type": "way", "ref": ri, "role": "inner", "geometry": Self::coords(proj, inner)},
            ]
        }));
    }
}

fn round7(v: f64) -> f64 {
    (v * 1e7).round() / 1e7
}

fn rect(cx: f64, cy: f64, hw: f64, hh: f64) -> Vec<[f64; 2]> {
    vec![[cx - hw, cy - hh], [cx + hw, cy - hh], [cx + hw, cy + hh], [cx - hw, cy + hh], [cx - hw, cy - hh]]
}

fn blob<R: Rng>(rng: &mut R, cx: f64, cy: f64, r: f64, n: usize) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let rr = r * rng.gen_range(0.7..1.0);
            [cx + rr * a.cos(), cy + rr * a.sin()]
        })
        .collect();
    pts.push(pts[0]);
    pts
}

fn polyline<R: Rng>(rng: &mut R, from: [f64; 2], to: [f64; 2], n: usize, wiggle: f64) -> Vec<[f64; 2]> {
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let j = if i == 0 || i == n { 0.0 } else { rng.gen_range(-wiggle..wiggle) };
            let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
            let len = (dx * dx + dy * dy).sqrt().max(1e-9);
            [from[0] + dx * t - dy / len * j, from[1] + dy * t + dx / len * j]
        })
        .collect()
}

const FARM_VALUES: &[&str] = &["farmland", "meadow", "orchard", "residential", "industrial", "grass"];
const ROAD_VALUES: &[&str] = &["residential", "track", "secondary", "service", "footway", "primary"];
const STREET_NAMES: &[&str] = &["Mill Lane", "Oak Street", "Station Road", "Church Way", "River Walk"];

fn populate<R: Rng>(b: &mut Builder, rng: &mut R, proj: &LocalProjection, index: usize) {
    let h = HALF_SIDE_M;
    let far = 2.5 * h;
    match index % 10 {
        // a large land-use polygon plus a road
        0 | 1 | 2 | 3 => {
            let v = FARM_VALUES[rng.gen_range(0..FARM_VALUES.len())];
            let r = h * rng.gen_range(0.5..1.1);
            let cx = rng.gen_range(-0.5..0.5) * h;
            let cy = rng.gen_range(-0.5..0.5) * h;
            b.way(proj, json!({"landuse": v, "source": "survey"}), &blob(rng, cx, cy, r, 9));
            let road = ROAD_VALUES[rng.gen_range(0..ROAD_VALUES.len())];
            let y = rng.gen_range(-0.8..0.8) * h;
            let dy = rng.gen_range(-h..h);
            b.way(proj, json!({"highway": road}), &polyline(rng, [-far, y], [far, y + dy], 6, 10.0));
        }
        // roads only
        4 | 5 => {
            let road = ROAD_VALUES[rng.gen_range(0..ROAD_VALUES.len())];
            let name = STREET_NAMES[rng.gen_range(0..STREET_NAMES.len())];
            let x = rng.gen_range(-0.6..0.6) * h;
            let dx = rng.gen_range(-h..h);
            let wiggle = rng.gen_range(1.0..40.0);
            let pts = polyline(rng, [x, -far], [x + dx, far], 8, wiggle);
            b.way(proj, json!({"highway": road, "name": name, "surface": "asphalt"}), &pts);
            b.way(proj, json!({"highway": "footway"}), &polyline(rng, [-h * 0.9, -h * 0.9], [-h * 0.5, -h * 0.6], 2, 1.0));
        }
        // only an administrative boundary: unusable
        6 => {
            b.way(
                proj,
                json!({"boundary": "administrative", "admin_level": "8"}),
                &polyline(rng, [-far, -far], [far, far], 4, 5.0),
            );
            b.future_way(proj, json!({"landuse": "residential"}), &rect(0.0, 0.0, h * 0.8, h * 0.8));
        }
        // a lake enclosing the patch, invisible to the bounding-box query
        7 => {
            b.way(proj, json!({"natural": "water", "water": "lake", "name": "Clearwater"}), &rect(0.0, 0.0, far, far));
        }
        // a small building, too small to be chosen, and a stream
        8 => {
            b.way(proj, json!({"building": "house"}), &rect(20.0, 20.0, 10.0, 8.0));
            let (y0, y1) = (rng.gen_range(-h..h), rng.gen_range(-h..h));
            let pts = polyline(rng, [-far, y0], [far, y1], 10, 30.0);
            b.way(proj, json!({"waterway": "stream"}), &pts);
        }
        // forest multipolygon with a clearing
        _ => {
            let outer = rect(h * 0.3, 0.0, h * 1.2, h * 0.7);
            let inner: Vec<[f64; 2]> = rect(h * 0.2, 0.0, h * 0.2, h * 0.2).into_iter().rev().collect();
            b.multipolygon(proj, json!({"type": "multipolygon", "natural": "wood"}), &outer, &inner);
        }
    }
}

fn ppm<R: Rng>(rng: &mut R) -> Vec<u8> {
    let mut out = format!("P6\n{IMAGE_SIDE} {IMAGE_SIDE}\n255\n").into_bytes();
    let base: [u8; 3] = [rng.gen(), rng.gen(), rng.gen()];
    for _ in 0..IMAGE_SIDE * IMAGE_SIDE {
        for c in base {
            out.push(c.wrapping_add(rng.gen_range(0..16)));
        }
    }
    out
}

/// Writes `n` patches under `dir`: `dir/images/{index.tsv,<id>.ppm}` and
/// `dir/osm.json`. Output depends only on `n` and `seed`.
pub fn generate(dir: impl AsRef<Path>, n: usize, seed: u64) -> std::io::Result<SyntheticFixture> {
    debug_assert!(IMAGE_EXTENSIONS.contains(&"ppm"));
    let dir = dir.as_ref();
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder { elements: Vec::new(), next_id: 1000 };
    let mut index = std::fs::File::create(images_dir.join("index.tsv"))?;
    writeln!(index, "patch_id\tmin_lon\tmin_lat\tmax_lon\tmax_lat\tgsd_m\tcapture_time")?;
    let mut patch_ids = Vec::new();
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    for i in 0..n {
        let center = GeoPoint::new(8.5 + (i % cols) as f64 * SPACING_DEG, 47.3 + (i / cols) as f64 * SPACING_DEG);
        let proj = LocalProjection::new(center);
        let lo = proj.inverse([-HALF_SIDE_M, -HALF_SIDE_M]);
        let hi = proj.inverse([HALF_SIDE_M, HALF_SIDE_M]);
        let id = format!("p{i:04}");
        let month = 1 + (i % 12);
        writeln!(
            index,
            "{id}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{GSD_M}\t2021-{month:02}-15T10:30:00Z",
            lo.lon, lo.lat, hi.lon, hi.lat
        )?;
        std::fs::write(images_dir.join(format!("{id}.ppm")), ppm(&mut rng))?;
        populate(&mut b, &mut rng, &proj, i);
        patch_ids.push(id);
    }
    let osm_path = dir.join("osm.json");
    let doc = json!({"version": 0.6, "generator": "geocaption-synthetic", "elements": b.elements});
    std::fs::write(&osm_path, serde_json::to_vec_pretty(&doc)?)?;
    Ok(SyntheticFixture { images_dir, osm_path, patch_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{DirImageSource, ImageSource};

    #[test]
    fn deterministic_and_readable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = generate(a.path(), 12, 3).unwrap();
        generate(b.path(), 12, 3).unwrap();
        assert_eq!(std::fs::read(&fa.osm_path).unwrap(), std::fs::read(b.path().join("osm.json")).unwrap());
        let specs = DirImageSource::new(&fa.images_dir).patches().unwrap();
        assert_eq!(specs.len(), 12);
        let (frame, _) = crate::geometry::PatchFrame::from_geo(&specs[0].bbox, 0.6, specs[0].capture_time).unwrap();
        assert_eq!((frame.width_px, frame.height_px), (448, 448));
        let fx = crate::osm::FixtureOverpass::from_json(&std::fs::read(&fa.osm_path).unwrap()).unwrap();
        assert!(fx.len() > 12);
    }
}
