//! Byte-stable experiment outputs: CSV tables with provenance headers, a
//! minimal SVG line plot, and a JSON run summary.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::HarnessError;

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// CSV with a single provenance comment line followed by a fixed header.
/// Cell formatting is pinned so reruns are byte-identical.
pub fn csv_document(seed: u64, config_hash: &str, header: &str, rows: &[Vec<String>]) -> String {
    let mut out = format!("# seed={seed} config_hash={config_hash}\n{header}\n");
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn fmt_f64(v: f64, decimals: usize) -> String {
    if v.is_finite() {
        format!("{v:.decimals$}")
    } else {
        String::from("nan")
    }
}

pub fn fmt_lambda(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    pub kind: &'a str,
    pub seed: u64,
    pub config_hash: &'a str,
    pub outputs: Vec<String>,
}

pub fn write_run_summary(path: &Path, summary: &RunSummary) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| HarnessError::Io(format!("summary: {e}")))?;
    write_text(path, &json)
}

/// Fixed-size line plot of (x, y) points with y clamped to [0, 1] axes.
/// Deterministic text output, no rendering dependencies.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let (w, h) = (640.0f64, 480.0f64);
    let (ml, mr, mt, mb) = (70.0f64, 20.0f64, 40.0f64, 50.0f64);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;
    let x_min = points.first().map(|p| p.0).unwrap_or(0.0);
    let x_max = points.last().map(|p| p.0).unwrap_or(1.0);
    let x_span = (x_max - x_min).max(1e-9);
    let px = |x: f64| ml + (x - x_min) / x_span * plot_w;
    let py = |y: f64| mt + (1.0 - y.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#,
        w / 2.0
    );
    // Axes.
    let _ = writeln!(
        svg,
        r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#,
        mt + plot_h
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        mt + plot_h,
        ml + plot_w,
        mt + plot_h
    );
    // Y ticks every 0.2.
    for i in 0..=5 {
        let yv = i as f64 * 0.2;
        let y = py(yv);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y}" x2="{ml}" y2="{y}" stroke="black"/>"#,
            ml - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            ml - 8.0,
            y + 4.0,
            fmt_f64(yv, 1)
        );
    }
    // X ticks at the data points.
    for &(x, _) in points {
        let xp = px(x);
        let _ = writeln!(
            svg,
            r#"<line x1="{xp}" y1="{}" x2="{xp}" y2="{}" stroke="black"/>"#,
            mt + plot_h,
            mt + plot_h + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{xp}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            mt + plot_h + 18.0,
            fmt_f64(x, 1)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{x_label}</text>"#,
        ml + plot_w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {})">{y_label}</text>"#,
        mt + plot_h / 2.0,
        mt + plot_h / 2.0
    );
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{},{}", fmt_f64(px(x), 2), fmt_f64(py(y), 2)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#1f6fb2" stroke-width="2" points="{}"/>"##,
        path.join(" ")
    );
    for &(x, y) in points {
        let _ = writeln!(
            svg,
            r##"<circle cx="{}" cy="{}" r="3" fill="#1f6fb2"/>"##,
            fmt_f64(px(x), 2),
            fmt_f64(py(y), 2)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
