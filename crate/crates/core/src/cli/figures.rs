//! Self-contained SVG figures.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const FONT: &str = "font-family=\"sans-serif\"";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(width: f64, height: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"22\" {FONT} font-size=\"15\" text-anchor=\"middle\">{}</text>",
        width / 2.0,
        escape(title)
    );
    s
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// One stacked panel of line traces sharing the time axis.
pub struct Panel {
    pub title: String,
    pub lines: Vec<(String, Vec<f64>)>,
}

/// Vertically stacked line panels, one legend entry per line.
pub fn line_panels(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let (width, panel_h, left, right, top) = (820.0, 150.0, 60.0, 150.0, 40.0);
    let height = top + panels.len() as f64 * (panel_h + 30.0) + 30.0;
    let mut s = header(width, height, title);
    let plot_w = width - left - right;
    for (p, panel) in panels.iter().enumerate() {
        let y0 = top + p as f64 * (panel_h + 30.0) + 18.0;
        let len = panel.lines.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let (lo, hi) = range(panel.lines.iter().flat_map(|(_, v)| v.iter().copied()));
        let _ = writeln!(
            s,
            "<text x=\"{left}\" y=\"{}\" {FONT} font-size=\"12\">{}</text>",
            y0 - 4.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{left}\" y=\"{y0}\" width=\"{plot_w}\" height=\"{panel_h}\" fill=\"none\" stroke=\"#888\"/>"
        );
        for (label, y) in [(hi, y0 + 10.0), (lo, y0 + panel_h)] {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{y}\" {FONT} font-size=\"10\" text-anchor=\"end\">{label:.2}</text>",
                left - 4.0
            );
        }
        for (i, (name, values)) in panel.lines.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let denom = (len.max(2) - 1) as f64;
            let points: Vec<String> = values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(t, v)| {
                    let x = left + plot_w * t as f64 / denom;
                    let y = y0 + panel_h * (hi - v) / (hi - lo);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                points.join(" ")
            );
            let ly = y0 + 12.0 + 14.0 * i as f64;
            let lx = left + plot_w + 10.0;
            let _ = writeln!(
                s,
                "<line x1=\"{lx}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>",
                ly - 4.0,
                lx + 16.0,
                ly - 4.0
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{ly}\" {FONT} font-size=\"11\">{}</text>",
                lx + 20.0,
                escape(name)
            );
        }
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"12\" text-anchor=\"middle\">{}</text>",
        left + plot_w / 2.0,
        height - 8.0,
        escape(x_label)
    );
    s.push_str("</svg>\n");
    s
}

/// Heatmap of `values[r][c]` with labeled rows and columns and the value
/// printed in each cell.
pub fn heatmap(title: &str, row_labels: &[String], col_labels: &[String], values: &[Vec<f64>]) -> String {
    let (cell, left, top) = (56.0, 110.0, 110.0);
    let width = left + cell * col_labels.len() as f64 + 30.0;
    let height = top + cell * row_labels.len() as f64 + 30.0;
    let mut s = header(width.max(320.0), height, title);
    let max = values.iter().flatten().cloned().fold(0.0, f64::max).max(1e-12);
    for (c, label) in col_labels.iter().enumerate() {
        let x = left + cell * (c as f64 + 0.5);
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"{}\" {FONT} font-size=\"11\" text-anchor=\"start\" transform=\"rotate(-45 {x} {})\">{}</text>",
            top - 8.0,
            top - 8.0,
            escape(label)
        );
    }
    for (r, label) in row_labels.iter().enumerate() {
        let y = top + cell * r as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"11\" text-anchor=\"end\">{}</text>",
            left - 6.0,
            y + cell / 2.0 + 4.0,
            escape(label)
        );
        for (c, &v) in values[r].iter().enumerate().take(col_labels.len()) {
            let shade = (255.0 * (1.0 - v / max)).round().clamp(0.0, 255.0) as u8;
            let x = left + cell * c as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\" stroke=\"white\"/>"
            );
            let ink = if shade < 128 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"middle\" fill=\"{ink}\">{v:.2}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One column of points per group with a mean ± std bar.
pub fn strip_plot(title: &str, groups: &[(String, Vec<f64>)]) -> String {
    let (width, height, left, top, bottom) = (120.0 + 110.0 * groups.len() as f64, 360.0, 60.0, 40.0, 50.0);
    let mut s = header(width.max(320.0), height, title);
    let plot_h = height - top - bottom;
    let (lo, hi) = range(groups.iter().flat_map(|(_, v)| v.iter().copied()));
    let y_of = |v: f64| top + plot_h * (hi - v) / (hi - lo);
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"#888\"/>",
        top + plot_h
    );
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} font-size=\"10\" text-anchor=\"end\">{v:.3}</text>",
            left - 4.0,
            y_of(v) + 3.0
        );
    }
    for (g, (label, values)) in groups.iter().enumerate() {
        let cx = left + 60.0 + 110.0 * g as f64;
        let color = PALETTE[g % PALETTE.len()];
        for (i, &v) in values.iter().enumerate() {
            let jitter = (i as f64 % 5.0 - 2.0) * 5.0;
            let _ = writeln!(
                s,
                "<circle cx=\"{}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\" fill-opacity=\"0.7\"/>",
                cx + jitter,
                y_of(v)
            );
        }
        if !values.is_empty() {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let sd = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let _ = writeln!(
                s,
                "<line x1=\"{}\" y1=\"{:.2}\" x2=\"{}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
                cx - 25.0,
                y_of(mean),
                cx + 25.0,
                y_of(mean)
            );
            let _ = writeln!(
                s,
                "<line x1=\"{cx}\" y1=\"{:.2}\" x2=\"{cx}\" y2=\"{:.2}\" stroke=\"black\"/>",
                y_of(mean + sd),
                y_of(mean - sd)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{cx}\" y=\"{}\" {FONT} font-size=\"11\" text-anchor=\"middle\">{}</text>",
            height - bottom + 20.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
