//! Minimal static SVG renderings (line charts and histograms) so plot data
//! can be eyeballed without any external plotting stack.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn axis_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Writes a multi-series line chart. Each series is a label plus (x, y)
/// points.
pub fn line_chart(path: &Path, title: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let (x_lo, x_hi) = axis_bounds(series.iter().flat_map(|(_, p)| p.iter().map(|&(x, _)| x)));
    let (y_lo, y_hi) = axis_bounds(series.iter().flat_map(|(_, p)| p.iter().map(|&(_, y)| y)));
    let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = write!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/><text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        title
    );
    // Axes with min/max labels.
    let _ = write!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    let _ = write!(
        svg,
        r#"<text x="{m}" y="{by}" font-size="10" font-family="sans-serif">{x_lo:.3}</text><text x="{r}" y="{by}" font-size="10" font-family="sans-serif" text-anchor="end">{x_hi:.3}</text><text x="4" y="{b}" font-size="10" font-family="sans-serif">{y_lo:.3}</text><text x="4" y="{t}" font-size="10" font-family="sans-serif">{y_hi:.3}</text>"#,
        m = MARGIN,
        by = HEIGHT - MARGIN + 16.0,
        r = WIDTH - MARGIN,
        b = HEIGHT - MARGIN,
        t = MARGIN + 4.0
    );
    for (i, (label, points)) in series.iter().enumerate() {
        if points.is_empty() {
            continue;
        }
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (j, &(x, y)) in points.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        let _ = write!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" font-family="sans-serif" fill="{color}">{label}</text>"#,
            WIDTH - MARGIN + 4.0 - 90.0,
            MARGIN + 14.0 * (i as f64 + 1.0)
        );
    }
    svg.push_str("</svg>");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Writes a histogram of the values over `bins` equal-width bins.
pub fn histogram(path: &Path, title: &str, values: &[f64], bins: usize) -> Result<()> {
    let bins = bins.max(1);
    let (lo, hi) = axis_bounds(values.iter().cloned());
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let max_count = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = write!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/><text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        title
    );
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = plot_w / bins as f64;
    for (i, &count) in counts.iter().enumerate() {
        let h = count as f64 / max_count * plot_h;
        let _ = write!(
            svg,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" stroke="white"/>"##,
            MARGIN + i as f64 * bar_w,
            HEIGHT - MARGIN - h,
            bar_w,
            h
        );
    }
    let _ = write!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><text x="{m}" y="{by}" font-size="10" font-family="sans-serif">{lo:.4}</text><text x="{r}" y="{by}" font-size="10" font-family="sans-serif" text-anchor="end">{hi:.4}</text>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        by = HEIGHT - MARGIN + 16.0
    );
    svg.push_str("</svg>");
    std::fs::write(path, svg)?;
    Ok(())
}
