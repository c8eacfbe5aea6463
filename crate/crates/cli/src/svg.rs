//! Minimal stacked-panel line plots. Each panel is 900×300.

use std::fmt::Write as _;

pub const PANEL_WIDTH: f64 = 900.0;
pub const PANEL_HEIGHT: f64 = 300.0;

const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 35.0;
/// Points kept per series after decimation.
const MAX_POINTS: usize = 3000;

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

fn decimate(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(MAX_POINTS);
    let mut out: Vec<(f64, f64)> = points.iter().step_by(stride).copied().collect();
    if let Some(last) = points.last() {
        if out.last() != Some(last) {
            out.push(*last);
        }
    }
    out
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let mut b = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for s in &panel.series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
            }
        }
    }
    if !b.0.is_finite() {
        return (0.0, 1.0, -1.0, 1.0);
    }
    if b.1 <= b.0 {
        b.1 = b.0 + 1.0;
    }
    if b.3 <= b.2 {
        let pad = b.2.abs().max(1.0) * 0.05;
        b.2 -= pad;
        b.3 += pad;
    } else {
        let pad = (b.3 - b.2) * 0.05;
        b.2 -= pad;
        b.3 += pad;
    }
    b
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{:.4}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_WIDTH}" height="{height}" viewBox="0 0 {PANEL_WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        let top = k as f64 * PANEL_HEIGHT;
        let (x0, x1, y0, y1) = bounds(panel);
        let pw = PANEL_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + MARGIN_TOP + (y1 - y) / (y1 - y0) * ph;

        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN_LEFT}" y="{}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#,
            top + MARGIN_TOP
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            PANEL_WIDTH / 2.0,
            top + 18.0,
            escape(&panel.title)
        );
        for i in 0..=4 {
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let _ = writeln!(
                out,
                r##"<text x="{}" y="{}" text-anchor="end">{}</text><line x1="{MARGIN_LEFT}" x2="{}" y1="{}" y2="{}" stroke="#ddd"/>"##,
                MARGIN_LEFT - 5.0,
                sy(fy) + 4.0,
                fmt_tick(fy),
                MARGIN_LEFT + pw,
                sy(fy),
                sy(fy)
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                sx(fx),
                top + PANEL_HEIGHT - 12.0,
                fmt_tick(fx)
            );
        }
        for (j, s) in panel.series.iter().enumerate() {
            let color = COLORS[j % COLORS.len()];
            let mut path = String::new();
            for (x, y) in decimate(&s.points) {
                if x.is_finite() && y.is_finite() {
                    let _ = write!(path, "{:.2},{:.2} ", sx(x), sy(y));
                }
            }
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
                path.trim_end()
            );
            if panel.series.len() > 1 {
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                    MARGIN_LEFT + 8.0 + 90.0 * j as f64,
                    top + MARGIN_TOP + 14.0,
                    escape(&s.label)
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}
