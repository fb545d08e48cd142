//! Static SVG plot of a spine with its measured windows.

use std::fmt::Write;

use cobb_core::cacm::{CobbReport, Method, WindowKind};
use cobb_core::landmarks::{Point, SpineLandmarks};

const MARGIN: f64 = 60.0;
const EXTEND: f64 = 50.0;
const BOX_PAD: f64 = 4.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

fn angle_labels(method: Method) -> [&'static str; 3] {
    match method {
        Method::Cacm => ["Cobb 1", "Cobb 2", "Cobb 3"],
        Method::Cam => ["MT", "PT", "TL"],
    }
}

fn window_class(kind: WindowKind) -> &'static str {
    match kind {
        WindowKind::Interior => "interior",
        WindowKind::End => "end",
        WindowKind::Main => "mt",
        WindowKind::Proximal => "pt",
        WindowKind::Distal => "tl",
    }
}

fn line(out: &mut String, class: &str, a: Point, b: Point) {
    let _ = writeln!(
        out,
        r#"  <line class="{class}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
        a.x, a.y, b.x, b.y
    );
}

/// Endplate through `a`, `b` extended by `EXTEND` on both sides.
fn extended(a: Point, b: Point) -> (Point, Point) {
    let len = a.distance(&b).max(f64::EPSILON);
    let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
    (
        Point::new(a.x - EXTEND * ux, a.y - EXTEND * uy),
        Point::new(b.x + EXTEND * ux, b.y + EXTEND * uy),
    )
}

/// Renders the vertebra outlines, the end-vertebra endplates of every
/// window, boxed inflection vertebrae and the three angles.
///
/// `tilts` are the vertebral tilts the report was computed from.
pub fn render_svg(report: &CobbReport, sl: &SpineLandmarks, tilts: &[f64; 17]) -> String {
    let pts = sl.points();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let (vx, vy) = (x0 - MARGIN, y0 - MARGIN);
    let (vw, vh) = (x1 - x0 + 2.0 * MARGIN + 160.0, y1 - y0 + 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{vx:.2} {vy:.2} {vw:.2} {vh:.2}" width="{:.0}" height="{:.0}">"#,
        vw, vh
    );
    let _ = writeln!(out, "  <title>{} ({})</title>", esc(&report.image_id), report.method);
    out.push_str("  <style>.vertebra{fill:none;stroke:#333}.inflection{fill:none;stroke:#c00;stroke-width:2}.interior,.mt{stroke:#06c}.end,.pt,.tl{stroke:#090;stroke-dasharray:4 2}text{font:12px sans-serif}</style>\n");

    for v in &sl.vertebrae {
        let c = v.corners();
        let points = [c[0], c[1], c[3], c[2]]
            .iter()
            .map(|p| format!("{:.2},{:.2}", p.x, p.y))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(out, r#"  <polygon class="vertebra" points="{points}"/>"#);
    }

    for w in &report.windows {
        let range = w.window.first..=w.window.last;
        let hi = range.clone().max_by(|a, b| tilts[*a].total_cmp(&tilts[*b]).then(b.cmp(a)));
        let lo = range.min_by(|a, b| tilts[*a].total_cmp(&tilts[*b]).then(a.cmp(b)));
        let (Some(hi), Some(lo)) = (hi, lo) else { continue };
        let (upper, lower) = if hi <= lo { (hi, lo) } else { (lo, hi) };
        let class = window_class(w.window.kind);
        let u = &sl.vertebrae[upper];
        let (a, b) = extended(u.top_left, u.top_right);
        line(&mut out, class, a, b);
        let l = &sl.vertebrae[lower];
        let (a, b) = extended(l.bottom_left, l.bottom_right);
        line(&mut out, class, a, b);
    }

    for &k in report.inflections.indices() {
        let c = sl.vertebrae[k].corners();
        let bx0 = c.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - BOX_PAD;
        let by0 = c.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - BOX_PAD;
        let bx1 = c.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + BOX_PAD;
        let by1 = c.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + BOX_PAD;
        let _ = writeln!(
            out,
            r#"  <rect class="inflection" x="{bx0:.2}" y="{by0:.2}" width="{:.2}" height="{:.2}"/>"#,
            bx1 - bx0,
            by1 - by0
        );
        let _ = writeln!(
            out,
            r#"  <text class="inflection-label" x="{:.2}" y="{:.2}">{}</text>"#,
            bx1 + 4.0,
            (by0 + by1) / 2.0,
            k + 1
        );
    }

    let labels = angle_labels(report.method);
    for (i, (label, angle)) in labels.iter().zip(report.angles_deg).enumerate() {
        let _ = writeln!(
            out,
            r#"  <text class="angle" x="{:.2}" y="{:.2}">{label}: {angle:.1}°</text>"#,
            x1 + 40.0,
            y0 + 20.0 * i as f64
        );
    }
    out.push_str("</svg>\n");
    out
}

/// File-system safe stem for an image id.
pub fn plot_file_name(image_id: &str, method: Method) -> String {
    let stem: String = image_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{stem}-{}.svg", method.to_string().to_ascii_lowercase())
}
