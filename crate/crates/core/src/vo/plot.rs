use std::fmt::Write;

use super::Trajectory;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Self-contained SVG line plot of labelled (x, y) series.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let points = series.iter().flat_map(|s| s.1.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (v, anchor, x, y) in [(x0, "start", sx(x0), HEIGHT - MARGIN + 16.0), (x1, "end", sx(x1), HEIGHT - MARGIN + 16.0)] {
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{v:.3}</text>"#);
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1) + 10.0)] {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{y:.2}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3}</text>"#, MARGIN - 4.0);
    }
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = MARGIN + 14.0 + 16.0 * k as f64;
        let _ = writeln!(out, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, MARGIN + 8.0, MARGIN + 28.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#, MARGIN + 32.0, ly + 4.0, escape(label));
    }
    out.push_str("</svg>\n");
    out
}

/// Top-down (x, z) view of camera positions.
pub fn trajectory_svg(series: &[(String, &Trajectory)]) -> String {
    let data: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(label, t)| (label.clone(), t.poses().map(|p| (p.translation().x, p.translation().z)).collect()))
        .collect();
    line_plot_svg("Trajectory", "x (m)", "z (m)", &data)
}

pub fn ape_svg(series: &[(String, Vec<(u64, f64)>)]) -> String {
    let data: Vec<(String, Vec<(f64, f64)>)> = series.iter().map(|(l, s)| (l.clone(), s.iter().map(|&(f, e)| (f as f64, e)).collect())).collect();
    line_plot_svg("Absolute position error", "frame", "APE (m)", &data)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_is_well_formed() {
        let svg = line_plot_svg("a<b", "x", "y", &[("one".into(), vec![(0.0, 0.0), (1.0, 2.0)]), ("two".into(), vec![(0.5, 1.0)])]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn degenerate_ranges_do_not_produce_nan() {
        let svg = line_plot_svg("t", "x", "y", &[("flat".into(), vec![(1.0, 1.0), (1.0, 1.0)])]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        let empty = line_plot_svg("t", "x", "y", &[]);
        assert!(!empty.contains("NaN"));
    }
}
