//! Axis-aligned path picture of a single step applied to `u' = (1, 1)`.

use std::fmt::Write as _;

use super::coeffs::SplitCoeffs;

/// Polyline starting at the origin with horizontal `alpha_k` and vertical
/// `beta_k` segments, in the order `alpha_1, beta_1, ..., alpha_K, beta_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPolyline {
    pub vertices: Vec<(f64, f64)>,
}

pub fn path_segments(coeffs: &SplitCoeffs) -> PathPolyline {
    let mut vertices = Vec::with_capacity(2 * coeffs.stages() + 1);
    let (mut x, mut y) = (0.0, 0.0);
    vertices.push((x, y));
    for (a, b) in coeffs.alpha().iter().zip(coeffs.beta()) {
        x += a;
        vertices.push((x, y));
        y += b;
        vertices.push((x, y));
    }
    PathPolyline { vertices }
}

impl PathPolyline {
    pub fn end(&self) -> (f64, f64) {
        *self.vertices.last().expect("path always has the origin")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in &self.vertices {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }

    /// Standalone SVG 1.1 document, one polyline per named path plus the
    /// diagonal of the exact flow.
    pub fn to_svg(paths: &[(&str, &PathPolyline)]) -> String {
        const SIZE: f64 = 400.0;
        const PALETTE: [&str; 8] = [
            "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
        ];
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for (_, p) in paths {
            for (x, y) in &p.vertices {
                lo = lo.min(*x).min(*y);
                hi = hi.max(*x).max(*y);
            }
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let scale = SIZE / (hi - lo);
        let map = |x: f64, y: f64| ((x - lo) * scale, SIZE - (y - lo) * scale);

        let mut svg = String::new();
        let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let (x0, y0) = map(0.0, 0.0);
        let (x1, y1) = map(1.0, 1.0);
        let _ = writeln!(
            svg,
            r#"  <line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="black" stroke-dasharray="4 4" stroke-width="1"/>"#
        );
        for (i, (name, p)) in paths.iter().enumerate() {
            let pts: Vec<String> = p
                .vertices
                .iter()
                .map(|&(x, y)| {
                    let (px, py) = map(x, y);
                    format!("{px},{py}")
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"  <polyline id="{name}" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
                pts.join(" "),
                PALETTE[i % PALETTE.len()]
            );
        }
        let _ = writeln!(svg, "</svg>");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strang_path() {
        let p = path_segments(&SplitCoeffs::strang());
        assert_eq!(
            p.vertices,
            vec![(0.0, 0.0), (0.5, 0.0), (0.5, 1.0), (1.0, 1.0), (1.0, 1.0)]
        );
    }

    #[test]
    fn trotter_path() {
        let p = path_segments(&SplitCoeffs::trotter());
        assert_eq!(p.vertices, vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn svg_contains_polyline() {
        let p = path_segments(&SplitCoeffs::strang());
        let svg = PathPolyline::to_svg(&[("strang", &p)]);
        assert!(svg.contains("<polyline id=\"strang\""));
        assert!(svg.starts_with("<?xml"));
        assert_eq!(p.to_csv().lines().count(), 6);
    }
}
