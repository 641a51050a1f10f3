//! Minimal static SVG line charts rendered straight from study data.
//! Data files are the primary artifact; these charts are a convenience
//! behind `--svg`.

use std::path::Path;

use crate::output::write_text;
use crate::CliError;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

fn transform(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi <= lo {
        return (out_lo + out_hi) / 2.0;
    }
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

/// Renders a line chart; log-scaling is applied per axis when requested
/// (points with non-positive coordinates are skipped on log axes).
pub fn line_chart(
    dir: &Path,
    name: &str,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_x: bool,
    log_y: bool,
) -> Result<(), CliError> {
    let map = |p: (f64, f64)| -> Option<(f64, f64)> {
        let x = if log_x {
            if p.0 <= 0.0 {
                return None;
            }
            p.0.log10()
        } else {
            p.0
        };
        let y = if log_y {
            if p.1 <= 0.0 {
                return None;
            }
            p.1.log10()
        } else {
            p.1
        };
        (x.is_finite() && y.is_finite()).then_some((x, y))
    };
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter_map(map)
        .collect();
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x_lo = x_lo.min(*x);
        x_hi = x_hi.max(*x);
        y_lo = y_lo.min(*y);
        y_hi = y_hi.max(*y);
    }
    if all.is_empty() {
        x_lo = 0.0;
        x_hi = 1.0;
        y_lo = 0.0;
        y_hi = 1.0;
    }
    if (y_hi - y_lo).abs() < 1e-30 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        title
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN / 2.0,
        t = MARGIN / 2.0
    ));
    let fmt_tick = |v: f64, log: bool| {
        let shown = if log { 10f64.powf(v) } else { v };
        format!("{shown:.4}")
    };
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
        MARGIN,
        H - MARGIN + 16.0,
        fmt_tick(x_lo, log_x)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
        W - MARGIN / 2.0,
        H - MARGIN + 16.0,
        fmt_tick(x_hi, log_x)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
        MARGIN - 4.0,
        H - MARGIN,
        fmt_tick(y_lo, log_y)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
        MARGIN - 4.0,
        MARGIN / 2.0 + 10.0,
        fmt_tick(y_hi, log_y)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
        W / 2.0,
        H - 10.0,
        x_label
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        H / 2.0,
        H / 2.0,
        y_label
    ));

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter_map(|&p| map(p))
            .map(|(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    transform(x, x_lo, x_hi, MARGIN, W - MARGIN / 2.0),
                    transform(y, y_lo, y_hi, H - MARGIN, MARGIN / 2.0)
                )
            })
            .collect();
        if !pts.is_empty() {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
        let ly = MARGIN / 2.0 + 14.0 * i as f64;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"3\" fill=\"{color}\"/>\n",
            W - 170.0,
            ly
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            W - 155.0,
            ly + 5.0,
            s.name
        ));
    }
    svg.push_str("</svg>\n");
    write_text(dir, name, &svg)?;
    Ok(())
}
