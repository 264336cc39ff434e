use std::fmt::Write;

use super::metrics::cdf;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
/// Points per curve; longer samples are thinned.
const MAX_POINTS: usize = 2000;

/// CDF of horizontal errors per method as a standalone SVG document. The
/// x axis runs from 0 to `x_max` meters (errors beyond it are clipped).
pub fn cdf_svg(curves: &[(String, Vec<f64>)], x_max: f64) -> String {
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |v: f64| MARGIN + plot_w * (v / x_max).clamp(0.0, 1.0);
    let y = |p: f64| HEIGHT - MARGIN - plot_h * p;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{x0:.1}" y1="{yy:.1}" x2="{x1:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{tx:.1}" y="{ty:.1}" text-anchor="end">{f:.1}</text>"##,
            x0 = MARGIN,
            x1 = WIDTH - MARGIN,
            yy = y(f),
            tx = MARGIN - 6.0,
            ty = y(f) + 4.0,
        );
        let _ = writeln!(
            s,
            r#"<text x="{xx:.1}" y="{ty:.1}" text-anchor="middle">{v:.0}</text>"#,
            xx = x(f * x_max),
            ty = HEIGHT - MARGIN + 18.0,
            v = f * x_max,
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">horizontal error (m)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(14 {:.1}) rotate(-90)" text-anchor="middle">CDF</text>"#,
        HEIGHT / 2.0
    );
    for (k, (name, errors)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let steps = cdf(errors);
        let stride = steps.len().div_ceil(MAX_POINTS).max(1);
        let mut points = format!("{:.2},{:.2}", x(0.0), y(0.0));
        let mut prev = 0.0;
        for (i, &(e, p)) in steps.iter().enumerate() {
            if i % stride == 0 || i + 1 == steps.len() {
                let _ = write!(points, " {:.2},{:.2} {:.2},{:.2}", x(e), y(prev), x(e), y(p));
                prev = p;
            }
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>"#);
        let ly = MARGIN + 16.0 + 16.0 * k as f64;
        let lx = WIDTH - MARGIN - 120.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
