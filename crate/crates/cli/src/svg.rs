//! Minimal deterministic SVG plots.

use crate::analysis::moving_average;
use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One learning curve: `(step, mean, min, max)` rows.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [(usize, f64, f64, f64)],
}

/// Success rate against environment steps, smoothed with a trailing window of
/// 10 evaluation points; the band is the smoothed min-max range over seeds.
pub fn learning_curves(title: &str, series: &[Series<'_>]) -> String {
    let max_step = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).max().unwrap_or(1).max(1) as f64;
    let x = |s: usize| PAD + (W - 2.0 * PAD) * s as f64 / max_step;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v.clamp(0.0, 1.0);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{PAD} {t} L{PAD} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        t = PAD,
        b = H - PAD,
        r = W - PAD
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{tick}</text>"#,
            PAD - 6.0,
            y(tick) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{max_step} steps</text>"#,
        W - PAD,
        H - PAD + 18.0
    );
    for (k, s) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        let steps: Vec<usize> = s.points.iter().map(|p| p.0).collect();
        let m = moving_average(&s.points.iter().map(|p| p.1).collect::<Vec<_>>(), 10);
        let lo = moving_average(&s.points.iter().map(|p| p.2).collect::<Vec<_>>(), 10);
        let hi = moving_average(&s.points.iter().map(|p| p.3).collect::<Vec<_>>(), 10);
        if !steps.is_empty() {
            let mut band = String::new();
            for (i, &st) in steps.iter().enumerate() {
                let _ = write!(band, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, x(st), y(hi[i]));
            }
            for (i, &st) in steps.iter().enumerate().rev() {
                let _ = write!(band, "L{:.2} {:.2} ", x(st), y(lo[i]));
            }
            let _ = writeln!(out, r#"<path d="{}Z" fill="{c}" fill-opacity="0.2" stroke="none"/>"#, band);
            let mut line = String::new();
            for (i, &st) in steps.iter().enumerate() {
                let _ = write!(line, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, x(st), y(m[i]));
            }
            let _ = writeln!(out, r#"<path d="{}" stroke="{c}" stroke-width="2" fill="none"/>"#, line.trim_end());
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" fill="{c}">{}</text>"#,
            PAD + 10.0,
            PAD + 16.0 * (k as f64 + 1.0),
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grayscale heatmap of a row-major matrix with values in `[-1, 1]`.
pub fn heatmap(title: &str, rows: usize, cols: usize, values: &[f64]) -> String {
    let cell = (360.0 / rows.max(cols).max(1) as f64).max(1.0);
    let (w, h) = (cols as f64 * cell + 2.0 * PAD, rows as f64 * cell + 2.0 * PAD);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c].clamp(-1.0, 1.0);
            let g = ((v + 1.0) / 2.0 * 255.0).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="rgb({g},{g},{g})"/>"#,
                PAD + c as f64 * cell,
                PAD + r as f64 * cell
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
