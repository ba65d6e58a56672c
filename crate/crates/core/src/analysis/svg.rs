//! Minimal dependency-free SVG rendering for heatmaps and line plots.

use std::fmt::Write as _;

const CELL: f64 = 28.0;
const MARGIN: f64 = 90.0;

/// Diverging blue-white-red colour for `v` in `[lo, hi]`.
fn colour(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
    let (r, g, b) = if t < 0.5 {
        let s = t / 0.5;
        (s, s, 1.0)
    } else {
        let s = (1.0 - t) / 0.5;
        (1.0, s, s)
    };
    let c = |x: f64| (x * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(r), c(g), c(b))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn heatmap(rows: &[String], cols: &[String], values: &[Vec<f64>], range: (f64, f64)) -> String {
    let w = MARGIN + CELL * cols.len() as f64 + 10.0;
    let h = MARGIN + CELL * rows.len() as f64 + 10.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"monospace\" font-size=\"9\">\n"
    );
    for (j, c) in cols.iter().enumerate() {
        let x = MARGIN + CELL * (j as f64 + 0.5);
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"{}\" transform=\"rotate(-60 {x} {})\">{}</text>",
            MARGIN - 4.0,
            MARGIN - 4.0,
            escape(c)
        );
    }
    for (i, r) in rows.iter().enumerate() {
        let y = MARGIN + CELL * i as f64;
        let _ = writeln!(s, "<text x=\"4\" y=\"{}\">{}</text>", y + CELL * 0.6, escape(r));
        for (j, v) in values[i].iter().enumerate() {
            let x = MARGIN + CELL * j as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\"><title>{} / {}: {v:.4}</title></rect>",
                colour(*v, range.0, range.1),
                escape(r),
                escape(&cols[j])
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Polyline plot of `(x, y)` points with min/max axis labels.
pub fn line_plot(title: &str, points: &[(f64, f64)]) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| points.iter().map(sel).fold(init, f);
    let (x0, x1) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let (y0, y1) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
    let sx = |x: f64| pad + if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.5 } * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - if y1 > y0 { (y - y0) / (y1 - y0) } else { 0.5 } * (h - 2.0 * pad);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"monospace\" font-size=\"10\">\n<text x=\"{pad}\" y=\"16\">{}</text>\n",
        escape(title)
    );
    let pts: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ =
        writeln!(s, "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" points=\"{}\"/>", pts.join(" "));
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"{}\">x: {x0:.3} .. {x1:.3}</text>", h - 8.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">y: {y0:.4} .. {y1:.4}</text>", w / 2.0, h - 8.0);
    s.push_str("</svg>\n");
    s
}
