//! Minimal SVG heat maps for sweep fields.

use std::fmt::Write;

use crate::sweep::Contour;

const CELL: f64 = 8.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const BAR_WIDTH: f64 = 16.0;
const BAR_GAP: f64 = 20.0;
const BAR_LABELS: f64 = 60.0;

/// Stops of the linear color ramp, low to high.
const RAMP: [(u8, u8, u8); 3] = [(30, 60, 160), (245, 245, 245), (190, 30, 40)];

pub struct HeatMap<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    /// Values along x, one per column of `field`.
    pub xs: &'a [f64],
    /// Values along y.
    pub ys: &'a [f64],
    /// `field[ix][iy]`; NaN cells are drawn grey.
    pub field: &'a [Vec<f64>],
    /// Color scale limits.
    pub range: (f64, f64),
    /// Metadata embedded as an XML comment.
    pub metadata: &'a str,
}

/// Linear interpolation through [`RAMP`] for `t` in `[0, 1]`.
fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let k = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - k as f64;
    let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    let (a, b) = (RAMP[k], RAMP[k + 1]);
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn fmt(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Pixel position of axis value `v` on an axis of `n` cells starting at `origin`.
fn project(values: &[f64], v: f64, origin: f64, flip: bool) -> f64 {
    let n = values.len();
    let (a, b) = (values[0], values[n - 1]);
    let t = if b == a { 0.5 } else { (v - a) / (b - a) };
    let frac = (t * (n - 1) as f64 + 0.5) / n as f64;
    let frac = if flip { 1.0 - frac } else { frac };
    origin + frac * n as f64 * CELL
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace("--", "- -")
}

/// Renders the map, and any contour polylines in axis coordinates on top.
pub fn render(map: &HeatMap, contour: Option<&Contour>) -> String {
    let (nx, ny) = (map.xs.len(), map.ys.len());
    let plot_w = nx as f64 * CELL;
    let plot_h = ny as f64 * CELL;
    let width = MARGIN_LEFT + plot_w + BAR_GAP + BAR_WIDTH + BAR_LABELS;
    let height = MARGIN_TOP + plot_h + MARGIN_BOTTOM;
    let (lo, hi) = map.range;
    let scale = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        fmt(width),
        fmt(height),
        fmt(width),
        fmt(height)
    );
    let _ = writeln!(s, "<!-- {} -->", escape(map.metadata));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        fmt(MARGIN_LEFT + plot_w / 2.0),
        escape(map.title)
    );

    // cells; y increases upward
    let _ = writeln!(s, r#"<g shape-rendering="crispEdges">"#);
    for ix in 0..nx {
        for iy in 0..ny {
            let v = map.field[ix][iy];
            let fill = if v.is_nan() { "#9a9a9a".to_string() } else { color(scale(v)) };
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                fmt(MARGIN_LEFT + ix as f64 * CELL),
                fmt(MARGIN_TOP + (ny - 1 - iy) as f64 * CELL),
                fmt(CELL),
                fmt(CELL),
                fill
            );
        }
    }
    let _ = writeln!(s, "</g>");

    if let Some(c) = contour {
        for line in &c.polylines {
            let pts: Vec<String> = line
                .iter()
                .map(|p| {
                    format!(
                        "{},{}",
                        fmt(project(map.xs, p[0], MARGIN_LEFT, false)),
                        fmt(project(map.ys, p[1], MARGIN_TOP, true))
                    )
                })
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#, pts.join(" "));
        }
    }

    // axes
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        fmt(x0),
        fmt(MARGIN_TOP),
        fmt(plot_w),
        fmt(plot_h)
    );
    for (k, v) in ticks(map.xs) {
        let x = MARGIN_LEFT + (k as f64 + 0.5) * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            fmt(x),
            fmt(y0 + 14.0),
            fmt(v)
        );
    }
    for (k, v) in ticks(map.ys) {
        let y = MARGIN_TOP + (ny - 1 - k) as f64 * CELL + 0.5 * CELL + 3.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
            fmt(x0 - 4.0),
            fmt(y),
            fmt(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        fmt(MARGIN_LEFT + plot_w / 2.0),
        fmt(y0 + 36.0),
        escape(map.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        fmt(MARGIN_TOP + plot_h / 2.0),
        escape(map.y_label)
    );

    // color bar
    let bx = MARGIN_LEFT + plot_w + BAR_GAP;
    let steps = 50;
    for k in 0..steps {
        let h = plot_h / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
            fmt(bx),
            fmt(MARGIN_TOP + plot_h - (k + 1) as f64 * h),
            fmt(BAR_WIDTH),
            fmt(h + 0.01),
            color((k as f64 + 0.5) / steps as f64)
        );
    }
    for (frac, v) in [(0.0, lo), (0.5, 0.5 * (lo + hi)), (1.0, hi)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10">{}</text>"#,
            fmt(bx + BAR_WIDTH + 4.0),
            fmt(MARGIN_TOP + plot_h * (1.0 - frac) + 3.0),
            fmt(v)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// About six evenly spaced tick indices, always including both ends.
fn ticks(values: &[f64]) -> Vec<(usize, f64)> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let stride = ((n - 1) / 5).max(1);
    let mut out: Vec<(usize, f64)> = (0..n).step_by(stride).map(|k| (k, values[k])).collect();
    if out.last().map(|&(k, _)| k) != Some(n - 1) {
        out.push((n - 1, values[n - 1]));
    }
    out
}
