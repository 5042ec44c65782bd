use std::fmt::Write;

use super::{Clipped, NormPoint};

/// Three-decimal rendering. Rust's float formatting rounds the exact binary
/// value half-to-even; negative zero is folded to zero.
pub fn format_coord(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

/// `{[(x, y), ...], [(x, y), ...]}`, one bracketed list per part.
pub fn format_parts(parts: &[Vec<NormPoint>]) -> String {
    let mut out = String::from("{");
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('[');
        for (j, p) in part.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "({}, {})", format_coord(p.x), format_coord(p.y));
        }
        out.push(']');
    }
    out.push('}');
    out
}

/// Formats clipped geometry. Holes are left out of the rendering.
pub fn format_geometry(g: &Clipped) -> String {
    match g {
        Clipped::Area(set) => {
            let outer: Vec<Vec<NormPoint>> = set.outer_rings().cloned().collect();
            format_parts(&outer)
        }
        Clipped::Line(path) => format_parts(&path.parts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Path, RingSet};

    #[test]
    fn triangle() {
        let ring: Vec<NormPoint> =
            [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.0, 0.0)].iter().map(|&p| p.into()).collect();
        assert_eq!(
            format_geometry(&Clipped::Area(RingSet::new(vec![ring]))),
            "{[(0.000, 0.000), (1.000, 0.000), (0.000, 1.000), (0.000, 0.000)]}"
        );
    }

    #[test]
    fn two_part_path() {
        let p = Path::new(vec![
            vec![NormPoint::new(0.0, 0.5), NormPoint::new(0.2, 0.5)],
            vec![NormPoint::new(0.7, 0.5), NormPoint::new(1.0, 0.5)],
        ]);
        assert_eq!(
            format_geometry(&Clipped::Line(p)),
            "{[(0.000, 0.500), (0.200, 0.500)], [(0.700, 0.500), (1.000, 0.500)]}"
        );
    }

    #[test]
    fn rounding() {
        assert_eq!(format_parts(&[vec![NormPoint::new(0.1234, 0.9876)]]), "{[(0.123, 0.988)]}");
        assert_eq!(format_coord(-1e-9), "0.000");
        // 0.0625 is exactly representable; ties go to even
        assert_eq!(format_coord(0.0625), "0.062");
        assert_eq!(format_coord(0.1875), "0.188");
    }
}
