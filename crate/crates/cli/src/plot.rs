//! Minimal SVG scatter of the (dist, ewma) feature plane.

use std::fmt::Write;

use aerator_core::features::FeaturePoint;

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Points coloured by label: off is blue, on is red, unlabelled is grey.
pub fn scatter_svg(points: &[FeaturePoint]) -> String {
    let max = |f: fn(&FeaturePoint) -> f64| points.iter().map(f).fold(0.0f64, f64::max).max(1e-9);
    let (mx, my) = (max(|p| p.dist), max(|p| p.ewma));
    let sx = |v: f64| PAD + v / mx * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - v / my * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{y} H{x}" fill="none" stroke="black"/>"#,
        y = H - PAD,
        x = W - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(&format!("dist (max {mx:.3})"))
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="14" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(&format!("ewma (max {my:.3})"))
    );
    for p in points {
        let colour = match p.label {
            Some(0) => "#1f77b4",
            Some(_) => "#d62728",
            None => "#7f7f7f",
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{colour}" fill-opacity="0.7"><title>frame {}</title></circle>"#,
            sx(p.dist),
            sy(p.ewma),
            p.frame
        );
    }
    s.push_str("</svg>\n");
    s
}
