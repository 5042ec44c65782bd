use super::NormPoint;

/// Default tolerance in normalized units (about 2.7 m on a 268.8 m patch).
pub const DEFAULT_DP_EPSILON: f64 = 0.01;

/// Distance from `p` to the closed segment `a..b`.
pub(crate) fn segment_distance(p: NormPoint, a: NormPoint, b: NormPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(NormPoint::new(a.x + t * dx, a.y + t * dy))
}

/// Ramer-Douglas-Peucker simplification. Endpoints are always kept; a
/// vertex survives when it lies more than `epsilon` from the segment joining
/// the current span's endpoints. `epsilon == 0` returns the input unchanged.
pub fn simplify_dp(points: &[NormPoint], epsilon: f64) -> Vec<NormPoint> {
    if points.len() <= 2 || epsilon <= 0.0 {
        return points.to_vec();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    mark(points, 0, points.len() - 1, epsilon, &mut keep);
    points.iter().zip(keep).filter_map(|(p, k)| k.then_some(*p)).collect()
}

fn mark(points: &[NormPoint], first: usize, last: usize, epsilon: f64, keep: &mut [bool]) {
    if last <= first + 1 {
        return;
    }
    let (a, b) = (points[first], points[last]);
    let mut best = (first, -1.0);
    for (i, &p) in points.iter().enumerate().take(last).skip(first + 1) {
        let d = segment_distance(p, a, b);
        if d > best.1 {
            best = (i, d);
        }
    }
    if best.1 > epsilon {
        keep[best.0] = true;
        mark(points, first, best.0, epsilon, keep);
        mark(points, best.0, last, epsilon, keep);
    }
}

/// Simplifies a closed ring by splitting it at the vertex farthest from its
/// start and simplifying both halves. Rings that would collapse below a
/// triangle are returned unchanged.
pub fn simplify_ring(ring: &[NormPoint], epsilon: f64) -> Vec<NormPoint> {
    if ring.len() < 5 || epsilon <= 0.0 {
        return ring.to_vec();
    }
    let start = ring[0];
    let split = ring
        .iter()
        .enumerate()
        .skip(1)
        .take(ring.len() - 2)
        .fold((1, -1.0), |acc, (i, p)| {
            let d = p.dist(start);
            if d > acc.1 {
                (i, d)
            } else {
                acc
            }
        })
        .0;
    let mut out = simplify_dp(&ring[..=split], epsilon);
    let tail = simplify_dp(&ring[split..], epsilon);
    out.extend_from_slice(&tail[1..]);
    if out.len() < 4 {
        ring.to_vec()
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_collapses_to_endpoints() {
        let pts: Vec<NormPoint> = (0..10).map(|i| NormPoint::new(i as f64 / 9.0, 0.5)).collect();
        let out = simplify_dp(&pts, 0.01);
        assert_eq!(out, vec![pts[0], pts[9]]);
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let pts: Vec<NormPoint> = (0..10).map(|i| NormPoint::new(i as f64 / 9.0, 0.5)).collect();
        assert_eq!(simplify_dp(&pts, 0.0), pts);
    }

    #[test]
    fn spike_is_kept() {
        let pts = vec![NormPoint::new(0.0, 0.0), NormPoint::new(0.5, 0.3), NormPoint::new(1.0, 0.0)];
        assert_eq!(simplify_dp(&pts, 0.1).len(), 3);
        assert_eq!(simplify_dp(&pts, 0.5).len(), 2);
    }

    #[test]
    fn ring_keeps_square_corners() {
        let mut ring = vec![];
        for i in 0..10 {
            ring.push(NormPoint::new(i as f64 / 10.0, 0.0));
        }
        for i in 0..10 {
            ring.push(NormPoint::new(1.0, i as f64 / 10.0));
        }
        for i in 0..10 {
            ring.push(NormPoint::new(1.0 - i as f64 / 10.0, 1.0));
        }
        for i in 0..10 {
            ring.push(NormPoint::new(0.0, 1.0 - i as f64 / 10.0));
        }
        ring.push(ring[0]);
        let s = simplify_ring(&ring, 0.01);
        assert_eq!(s.len(), 5);
        assert_eq!(s.first(), s.last());
    }
}
