//! Deterministic SVG rendering of curve and surface files.
//!
//! Plot coordinates are written with two decimals; the surface legend
//! labels use the shortest round-trip form of the data bounds.

use std::fmt::Write as _;

use distmap::distortion::{DistortionCurve, SurfaceGrid};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;
const PLOT: f64 = SIZE - 2.0 * MARGIN;

fn px(q: f64) -> f64 {
    MARGIN + PLOT * q
}

fn py(v: f64) -> f64 {
    MARGIN + PLOT * (1.0 - v)
}

fn header(out: &mut String, width: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{SIZE}" viewBox="0 0 {width} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        SIZE / 2.0
    );
}

fn axes(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{PLOT}" height="{PLOT}" fill="none" stroke="black"/>"#
    );
    for (label, x, y, anchor) in [
        ("0", px(0.0), py(0.0) + 16.0, "middle"),
        ("1", px(1.0), py(0.0) + 16.0, "middle"),
        ("1", px(0.0) - 6.0, py(1.0) + 4.0, "end"),
    ] {
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{label}</text>"#
        );
    }
}

/// Fitted map `D̂` against the dashed identity line.
pub fn render_curve(curve: &DistortionCurve) -> String {
    let mut out = String::new();
    header(&mut out, SIZE, "distortion map");
    axes(&mut out);
    let _ = writeln!(
        out,
        r##"<line id="identity" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#777777" stroke-dasharray="6,4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let mut d = String::new();
    for (i, (&q, &v)) in curve.q.iter().zip(&curve.cdf).enumerate() {
        let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, px(q), py(v));
    }
    let _ = writeln!(
        out,
        r##"<path id="fitted" d="{d}" fill="none" stroke="#1f4e9c" stroke-width="2"/>"##
    );
    out.push_str("</svg>\n");
    out
}

/// Piecewise-linear colour scale from dark blue through white to dark red.
fn colour(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 3] = [(0.0, [33.0, 64.0, 154.0]), (0.5, [247.0, 247.0, 247.0]), (1.0, [178.0, 24.0, 43.0])];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let (lo, hi) = if t <= 0.5 { (STOPS[0], STOPS[1]) } else { (STOPS[1], STOPS[2]) };
    let w = (t - lo.0) / (hi.0 - lo.0);
    let c: Vec<u8> = (0..3).map(|k| (lo.1[k] + w * (hi.1[k] - lo.1[k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Heat map of `d̂(q1, q2)` with a legend spanning the data range.
pub fn render_surface(surface: &SurfaceGrid) -> String {
    let (min, max) = (surface.min(), surface.max());
    let span = if max > min { max - min } else { 1.0 };
    let width = SIZE + 90.0;
    let mut out = String::new();
    header(&mut out, width, "distortion surface");
    let n = surface.q.len();
    let cell = PLOT / n as f64;
    for (i, row) in surface.values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                MARGIN + i as f64 * cell,
                MARGIN + PLOT - (j + 1) as f64 * cell,
                cell + 0.01,
                cell + 0.01,
                colour((v - min) / span)
            );
        }
    }
    axes(&mut out);
    let lx = SIZE + 10.0;
    let _ = writeln!(out, r#"<g id="legend" data-min="{min}" data-max="{max}">"#);
    let steps = 20;
    let h = PLOT / steps as f64;
    for k in 0..steps {
        let t = (k as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.2}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            MARGIN + PLOT - (k + 1) as f64 * h,
            h + 0.01,
            colour(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text id="legend-max" x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{max}</text>"#,
        lx + 20.0,
        MARGIN + 4.0
    );
    let _ = writeln!(
        out,
        r#"<text id="legend-min" x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{min}</text>"#,
        lx + 20.0,
        MARGIN + PLOT + 4.0
    );
    out.push_str("</g>\n</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_scale_endpoints() {
        assert_eq!(colour(0.0), "#21409a");
        assert_eq!(colour(0.5), "#f7f7f7");
        assert_eq!(colour(1.0), "#b2182b");
        assert_eq!(colour(f64::NAN), "#f7f7f7");
    }

    #[test]
    fn identity_curve_lies_on_reference() {
        let svg = render_curve(&DistortionCurve::identity());
        assert!(svg.contains(r#"id="identity""#));
        assert!(svg.contains("M40.00,440.00 L42.00,438.00"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
