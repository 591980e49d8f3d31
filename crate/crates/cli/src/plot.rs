use std::fmt::Write;

use geoloc::evaluation::PrPoint;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained SVG of a precision/recall curve on the unit square, one
/// circle marker per point.
pub fn pr_svg(points: &[PrPoint], title: &str) -> String {
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let x = |r: f64| MARGIN + r.clamp(0.0, 1.0) * pw;
    let y = |p: f64| HEIGHT - MARGIN - p.clamp(0.0, 1.0) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black" fill="none"><path d="M{MARGIN} {} V{} H{}"/></g>"#,
        MARGIN,
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    );
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{v}</text>"#, x(v), HEIGHT - MARGIN + 14.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{v}</text>"#, MARGIN - 6.0, y(v) + 3.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">recall</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">precision</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    if !points.is_empty() {
        let path: Vec<String> = points.iter().map(|p| format!("{:.3},{:.3}", x(p.recall), y(p.precision))).collect();
        let _ = writeln!(s, r#"<polyline class="curve" fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, path.join(" "));
    }
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle class="marker" cx="{:.3}" cy="{:.3}" r="3.5" fill="steelblue"><title>score {} precision {} recall {}</title></circle>"#,
            x(p.recall),
            y(p.precision),
            p.threshold,
            p.precision,
            p.recall
        );
    }
    s.push_str("</svg>\n");
    s
}
