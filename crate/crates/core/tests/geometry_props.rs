use chrono::{TimeZone, Utc};
use geocaption::geometry::{area_fraction, clip_path, clip_rings, simplify_dp, NormPoint, Orientation};
use geocaption::osm::{merge_dedupe, ElementKind, OsmElement, OsmTag};
use proptest::prelude::*;

fn p(x: f64, y: f64) -> NormPoint {
    NormPoint::new(x, y)
}

fn inside_unit(q: NormPoint) -> bool {
    (0.0..=1.0).contains(&q.x) && (0.0..=1.0).contains(&q.y)
}

/// Even-odd ray casting.
fn point_in_polygon(q: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > q.1) != (yj > q.1) && q.0 < (xj - xi) * (q.1 - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Fraction of a regular grid over the unit square that falls inside `poly`.
fn grid_area(poly: &[(f64, f64)], n: usize) -> f64 {
    let mut hits = 0usize;
    for i in 0..n {
        for j in 0..n {
            let q = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
            if point_in_polygon(q, poly) {
                hits += 1;
            }
        }
    }
    hits as f64 / (n * n) as f64
}

fn seg_dist(q: NormPoint, a: NormPoint, b: NormPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let l2 = dx * dx + dy * dy;
    let t = if l2 == 0.0 { 0.0 } else { (((q.x - a.x) * dx + (q.y - a.y) * dy) / l2).clamp(0.0, 1.0) };
    (q.x - a.x - t * dx).hypot(q.y - a.y - t * dy)
}

fn convex_polygon() -> impl Strategy<Value = Vec<(f64, f64)>> {
    (-0.5f64..1.5, -0.5f64..1.5, 0.05f64..1.0, prop::collection::vec(0.0f64..1.0, 3..12)).prop_map(
        |(cx, cy, r, mut angles)| {
            angles.sort_by(f64::total_cmp);
            angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            angles
                .iter()
                .map(|a| {
                    let t = a * std::f64::consts::TAU;
                    (cx + r * t.cos(), cy + r * t.sin())
                })
                .collect()
        },
    )
}

fn polyline() -> impl Strategy<Value = Vec<NormPoint>> {
    prop::collection::vec((-0.5f64..1.5, -0.5f64..1.5), 2..30)
        .prop_map(|v| v.into_iter().map(|(x, y)| p(x, y)).collect())
}

fn element(kind: ElementKind, id: i64, marker: &str) -> OsmElement {
    OsmElement {
        id,
        kind,
        tags: vec![OsmTag::new("src", marker)],
        parts: Vec::new(),
        fetched_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rectangle_clip_area_matches_interval_product(
        x0 in -1.0f64..2.0, w in 0.01f64..2.0, y0 in -1.0f64..2.0, h in 0.01f64..2.0,
    ) {
        let (x1, y1) = (x0 + w, y0 + h);
        let ring = vec![p(x0, y0), p(x1, y0), p(x1, y1), p(x0, y1), p(x0, y0)];
        let (set, cropped) = clip_rings(&[ring]);
        let overlap = |a: f64, b: f64| (b.min(1.0) - a.max(0.0)).max(0.0);
        let expected = overlap(x0, x1) * overlap(y0, y1);
        prop_assert!((area_fraction(&set) - expected).abs() < 1e-9, "{} vs {}", area_fraction(&set), expected);
        let outside = x0 < 0.0 || y0 < 0.0 || x1 > 1.0 || y1 > 1.0;
        prop_assert_eq!(cropped, outside);
    }

    #[test]
    fn convex_clip_area_matches_grid_estimate(poly in convex_polygon()) {
        prop_assume!(poly.len() >= 3);
        let mut ring: Vec<NormPoint> = poly.iter().map(|&(x, y)| p(x, y)).collect();
        ring.push(ring[0]);
        let (set, _) = clip_rings(&[ring]);
        for r in &set.rings {
            prop_assert!(r.iter().all(|&q| inside_unit(q)));
            prop_assert_eq!(r.first(), r.last());
        }
        let est = grid_area(&poly, 400);
        prop_assert!((area_fraction(&set) - est).abs() < 0.01, "{} vs {}", area_fraction(&set), est);
    }

    #[test]
    fn clipped_paths_stay_inside_and_keep_inner_length(line in polyline()) {
        let (path, cropped) = clip_path(std::slice::from_ref(&line));
        prop_assert_eq!(cropped, line.iter().any(|&q| !inside_unit(q)));
        for part in &path.parts {
            prop_assert!(part.len() >= 2);
            prop_assert!(part.iter().all(|&q| inside_unit(q)));
        }
        // length inside the square estimated by sampling each segment
        let mut expected = 0.0;
        for w in line.windows(2) {
            let n = 2000;
            let inside = (0..n)
                .filter(|&k| {
                    let t = (k as f64 + 0.5) / n as f64;
                    inside_unit(p(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y)))
                })
                .count();
            expected += w[0].dist(w[1]) * inside as f64 / n as f64;
        }
        let got: f64 = path.parts.iter().flat_map(|q| q.windows(2)).map(|w| w[0].dist(w[1])).sum();
        prop_assert!((got - expected).abs() < 0.01 * line.len() as f64, "{} vs {}", got, expected);
    }

    #[test]
    fn dp_keeps_endpoints_and_a_subsequence(line in polyline(), eps in 0.0f64..0.3) {
        let out = simplify_dp(&line, eps);
        prop_assert_eq!(out.first(), line.first());
        prop_assert_eq!(out.last(), line.last());
        let mut it = line.iter();
        prop_assert!(out.iter().all(|q| it.any(|r| r == q)));
        prop_assert_eq!(simplify_dp(&out, eps), out.clone());
        for q in &line {
            let d = out.windows(2).map(|w| seg_dist(*q, w[0], w[1])).fold(f64::INFINITY, f64::min);
            prop_assert!(d <= eps + 1e-12, "dropped point {:?} at {} > {}", q, d, eps);
        }
    }

    #[test]
    fn orientation_ignores_sign_and_scale(dx in -10.0f64..10.0, dy in -10.0f64..10.0, k in 0.01f64..100.0) {
        prop_assume!(dx.hypot(dy) > 1e-6);
        let o = Orientation::from_vector(dx, dy);
        prop_assert_eq!(Orientation::from_vector(-dx, -dy), o);
        prop_assert_eq!(Orientation::from_vector(dx * k, dy * k), o);
    }

    #[test]
    fn merge_is_a_keyed_union_preferring_first(
        a in prop::collection::vec((any::<bool>(), 0i64..20), 0..15),
        b in prop::collection::vec((any::<bool>(), 0i64..20), 0..15),
    ) {
        let kind = |r: bool| if r { ElementKind::Relation } else { ElementKind::Way };
        let first: Vec<_> = a.iter().map(|&(r, id)| element(kind(r), id, "first")).collect();
        let second: Vec<_> = b.iter().map(|&(r, id)| element(kind(r), id, "second")).collect();
        let merged = merge_dedupe(first.clone(), second.clone());
        let keys: Vec<_> = merged.iter().map(OsmElement::key).collect();
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let mut expected: Vec<_> = first.iter().chain(&second).map(OsmElement::key).collect();
        expected.sort();
        expected.dedup();
        prop_assert_eq!(&keys, &expected);
        for e in &merged {
            let in_first = first.iter().any(|f| f.key() == e.key());
            prop_assert_eq!(e.tags[0].value.as_str(), if in_first { "first" } else { "second" });
        }
    }
}
