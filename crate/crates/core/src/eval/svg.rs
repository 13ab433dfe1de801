//! Minimal self-contained SVG rendering for ROC / PR curves and
//! limit-band series plots. No styling dependencies; every plot is a single
//! standalone file.

use std::fmt::Write;

use crate::hpd::Interval;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{title}</text>\n",
        WIDTH / 2.0
    )
}

fn axes(xlabel: &str, ylabel: &str) -> String {
    let x0 = MARGIN;
    let y0 = HEIGHT - MARGIN;
    let x1 = WIDTH - MARGIN;
    let y1 = MARGIN;
    let mut s = String::new();
    let _ = write!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\">{xlabel}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\" transform=\"rotate(-90 16 {})\">{ylabel}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 16.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
    );
    s
}

fn polyline(points: &[(f64, f64)], color: &str, dash: bool) -> String {
    let coords: Vec<String> =
        points.iter().map(|&(x, y)| format!("{:.2},{:.2}", x, y)).collect();
    format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{}/>\n",
        coords.join(" "),
        if dash { " stroke-dasharray=\"5,4\"" } else { "" }
    )
}

/// Unit-square curve plot (ROC or PR): one polyline per labeled curve plus a
/// diagonal reference.
pub fn curves_svg(title: &str, xlabel: &str, ylabel: &str, curves: &[(String, &[(f64, f64)])]) -> String {
    let project = |&(x, y): &(f64, f64)| {
        (
            MARGIN + x.clamp(0.0, 1.0) * (WIDTH - 2.0 * MARGIN),
            HEIGHT - MARGIN - y.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN),
        )
    };
    let mut svg = header(title);
    svg.push_str(&axes(xlabel, ylabel));
    for (tick, label) in [(0.0, "0"), (0.5, "0.5"), (1.0, "1")] {
        let (px, py) = project(&(tick, 0.0));
        let _ = write!(
            svg,
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{label}</text>\n",
            py + 16.0
        );
        let (qx, qy) = project(&(0.0, tick));
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"11\">{label}</text>\n",
            qx - 6.0,
            qy + 4.0
        );
    }
    svg.push_str(&polyline(&[project(&(0.0, 0.0)), project(&(1.0, 1.0))], "#bbbbbb", true));
    for (i, (label, points)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let projected: Vec<(f64, f64)> = points.iter().map(|p| project(p)).collect();
        svg.push_str(&polyline(&projected, color, false));
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             fill=\"{color}\">{label}</text>\n",
            WIDTH - MARGIN - 150.0,
            MARGIN + 18.0 * (i as f64 + 1.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Longitudinal series with its adaptive limit band: observed values as a
/// dotted line with markers, limits as dashed step lines, flagged samples as
/// filled diamonds.
pub fn series_band_svg(
    title: &str,
    values: &[f64],
    limits: &[Interval],
    flagged: &[bool],
) -> String {
    assert_eq!(values.len(), limits.len());
    assert_eq!(values.len(), flagged.len());
    let finite_limits = limits.iter().flat_map(|iv| {
        [iv.lo, iv.hi].into_iter().filter(|v| v.is_finite())
    });
    let mut lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for v in finite_limits {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let pad = 0.08 * (hi - lo).max(1e-9);
    lo -= pad;
    hi += pad;
    let n = values.len().max(2) as f64;
    let project = |i: usize, v: f64| {
        (
            MARGIN + i as f64 / (n - 1.0) * (WIDTH - 2.0 * MARGIN),
            HEIGHT - MARGIN - ((v.clamp(lo, hi) - lo) / (hi - lo)) * (HEIGHT - 2.0 * MARGIN),
        )
    };
    let mut svg = header(title);
    svg.push_str(&axes("sample", "log value"));
    let uppers: Vec<(f64, f64)> =
        limits.iter().enumerate().map(|(i, iv)| project(i, iv.hi)).collect();
    let lowers: Vec<(f64, f64)> =
        limits.iter().enumerate().map(|(i, iv)| project(i, iv.lo)).collect();
    svg.push_str(&polyline(&uppers, "#d62728", true));
    svg.push_str(&polyline(&lowers, "#d62728", true));
    let series: Vec<(f64, f64)> =
        values.iter().enumerate().map(|(i, &v)| project(i, v)).collect();
    svg.push_str(&polyline(&series, "#1f77b4", false));
    for (i, (&v, &f)) in values.iter().zip(flagged).enumerate() {
        let (x, y) = project(i, v);
        if f {
            let _ = write!(
                svg,
                "<path d=\"M {x} {} L {} {y} L {x} {} L {} {y} Z\" fill=\"#e6b422\" \
                 stroke=\"#8a6d00\"/>\n",
                y - 6.0,
                x + 6.0,
                y + 6.0,
                x - 6.0
            );
        } else {
            let _ = write!(svg, "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"#1f77b4\"/>\n");
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_svg_is_wellformed() {
        let points = [(0.0, 0.0), (0.3, 0.8), (1.0, 1.0)];
        let svg = curves_svg("roc", "FPR", "TPR", &[("m1".to_string(), &points[..])]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("m1"));
    }

    #[test]
    fn series_svg_handles_infinite_limits() {
        let values = [1.0, 1.2, 0.9];
        let limits = [
            Interval { lo: f64::NEG_INFINITY, hi: 2.0 },
            Interval { lo: 0.0, hi: 2.0 },
            Interval { lo: 0.1, hi: 1.9 },
        ];
        let svg = series_band_svg("T/E", &values, &limits, &[false, true, false]);
        assert!(svg.contains("path d="));
        assert!(!svg.contains("NaN"));
    }
}
